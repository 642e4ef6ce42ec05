#include "dibm/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dibm/errors.hpp"
#include "dibm/rng.hpp"

namespace dibm::env {
namespace {

constexpr std::uint64_t kLayoutRange = 1'000'000;
constexpr float kPi = std::numbers::pi_v<float>;
constexpr float kArriveTol = 0.01f;

Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(float s, Vec2 a) { return {s * a.x, s * a.y}; }
float norm(Vec2 a) { return std::sqrt(a.x * a.x + a.y * a.y); }
float dist(Vec2 a, Vec2 b) { return norm(a - b); }
Vec2 unit(Vec2 a) {
  const float n = norm(a);
  return n > 1e-9f ? (1.0f / n) * a : Vec2{1.0f, 0.0f};
}
Vec2 clamp_arena(Vec2 p) {
  return {std::clamp(p.x, -kArena, kArena), std::clamp(p.y, -kArena, kArena)};
}
float wrap_angle(float a) {
  while (a > kPi) a -= 2.0f * kPi;
  while (a < -kPi) a += 2.0f * kPi;
  return a;
}

Vec2 random_point(Rng& rng, float lo, float hi) {
  return {static_cast<float>(rng.uniform(lo, hi)), static_cast<float>(rng.uniform(lo, hi))};
}

Vec2 random_point_away(Rng& rng, Vec2 from, float min_dist, float lo, float hi) {
  for (int i = 0; i < 1000; ++i) {
    Vec2 p = random_point(rng, lo, hi);
    if (dist(p, from) >= min_dist) return p;
  }
  return random_point(rng, lo, hi);
}

// Full-speed step toward `target`; velocity norm at most 1.
Action move_to(const EnvState& s, Vec2 target, float grip) {
  Vec2 v = (1.0f / (kDt * kSpeed)) * (target - s.agent);
  const float n = norm(v);
  if (n > 1.0f) v = (1.0f / n) * v;
  return {v.x, v.y, grip};
}

Action hold(float grip) { return {0.0f, 0.0f, grip}; }

constexpr float kOpen = 1.0f;
constexpr float kClose = -1.0f;

Vec2 rim_start(const EnvState& s) { return s.goal + Vec2{s.params.orbit_radius, 0.0f}; }

Action orbit_action(const EnvState& s) {
  const Vec2 rel = s.agent - s.goal;
  const float angle = std::atan2(rel.y, rel.x);
  const float step = 0.95f * kSpeed * kDt / s.params.orbit_radius;
  const Vec2 target = s.goal + s.params.orbit_radius *
                                   Vec2{std::cos(angle + step), std::sin(angle + step)};
  return move_to(s, target, kClose);
}

int compute_phase(const EnvState& s) {
  switch (s.kind) {
    case TaskKind::kReach:
    case TaskKind::kTwoGoal: {
      float d = dist(s.agent, s.goal);
      if (s.kind == TaskKind::kTwoGoal) {
        d = std::min(dist(s.agent, s.objects[0]), dist(s.agent, s.objects[1]));
      }
      return d <= 0.15f ? 1 : 0;
    }
    case TaskKind::kPush:
      return s.contact ? 1 : 0;
    case TaskKind::kPickPlace:
    case TaskKind::kFold:
      if (s.released) return 2;
      return s.held >= 0 ? 1 : 0;
    case TaskKind::kStir:
      return s.orbit_progress > 0.0f ? 1 : 0;
    case TaskKind::kPickStir:
      if (s.orbit_progress != 0.0f) return 2;
      return s.held >= 0 ? 1 : 0;
  }
  return 0;
}

}  // namespace

std::string task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kReach: return "reach_goal";
    case TaskKind::kPush: return "push_object";
    case TaskKind::kPickPlace: return "pick_and_place";
    case TaskKind::kTwoGoal: return "two_goal_reach";
    case TaskKind::kFold: return "fold_drag";
    case TaskKind::kStir: return "stir_orbit";
    case TaskKind::kPickStir: return "pick_and_stir";
  }
  return "unknown";
}

namespace {

TaskSpec make_task(int id, TaskKind kind, int phases, std::uint64_t seed) {
  TaskSpec t;
  t.task_id = id;
  t.kind = kind;
  t.name = task_kind_name(kind);
  t.phase_count = phases;
  t.layout_seed_lo = seed * kLayoutRange;
  t.layout_seed_hi = t.layout_seed_lo + kLayoutRange;
  return t;
}

}  // namespace

std::vector<TaskSpec> build_suite(std::uint64_t seed) {
  return {
      make_task(0, TaskKind::kReach, 2, seed),     make_task(1, TaskKind::kPush, 2, seed),
      make_task(2, TaskKind::kPickPlace, 3, seed), make_task(3, TaskKind::kTwoGoal, 2, seed),
      make_task(4, TaskKind::kFold, 3, seed),      make_task(5, TaskKind::kStir, 2, seed),
  };
}

TaskSpec held_out_task(std::uint64_t seed) { return make_task(6, TaskKind::kPickStir, 3, seed); }

EnvState reset(const TaskSpec& task, std::uint64_t episode_seed) {
  const std::uint64_t range = task.layout_seed_hi - task.layout_seed_lo;
  const std::uint64_t layout = task.layout_seed_lo + (range ? episode_seed % range : episode_seed);
  Rng rng(mix_seed(layout, static_cast<std::uint64_t>(task.task_id), 0x1a7));
  EnvState s;
  s.kind = task.kind;
  s.task_id = task.task_id;
  s.params = task.success;
  s.gripper = 1.0f;
  switch (task.kind) {
    case TaskKind::kReach:
      s.agent = random_point(rng, -0.8f, 0.8f);
      s.goal = random_point_away(rng, s.agent, 0.4f, -0.8f, 0.8f);
      break;
    case TaskKind::kPush:
    case TaskKind::kPickPlace:
      s.agent = random_point(rng, -0.8f, 0.8f);
      s.objects[0] = random_point_away(rng, s.agent, 0.25f, -0.6f, 0.6f);
      s.goal = random_point_away(rng, s.objects[0], 0.4f, -0.6f, 0.6f);
      break;
    case TaskKind::kTwoGoal: {
      s.agent = {static_cast<float>(rng.uniform(-0.1, 0.1)),
                 static_cast<float>(rng.uniform(-0.8, -0.6))};
      const float gy = static_cast<float>(rng.uniform(0.3, 0.7));
      s.objects[0] = {static_cast<float>(rng.uniform(-0.7, -0.5)), gy};
      s.objects[1] = {static_cast<float>(rng.uniform(0.5, 0.7)), gy};
      break;
    }
    case TaskKind::kFold: {
      s.agent = random_point(rng, -0.8f, 0.8f);
      s.objects[0] = {static_cast<float>(rng.uniform(-0.75, -0.45)),
                      static_cast<float>(rng.uniform(-0.6, 0.6))};
      s.goal = {s.objects[0].x + static_cast<float>(rng.uniform(0.8, 1.1)), s.objects[0].y};
      break;
    }
    case TaskKind::kStir:
      s.goal = random_point(rng, -0.45f, 0.45f);
      s.agent = random_point_away(rng, s.goal, 0.5f, -0.8f, 0.8f);
      break;
    case TaskKind::kPickStir:
      s.goal = random_point(rng, -0.45f, 0.45f);
      s.objects[0] = random_point_away(rng, s.goal, 0.5f, -0.7f, 0.7f);
      s.agent = random_point_away(rng, s.objects[0], 0.25f, -0.8f, 0.8f);
      break;
  }
  s.phase = compute_phase(s);
  return s;
}

EnvState step_env(const EnvState& state, const Action& action) {
  EnvState s = state;
  Action a = action;
  for (auto& v : a) v = std::isfinite(v) ? std::clamp(v, -1.0f, 1.0f) : 0.0f;

  const Vec2 prev_agent = s.agent;
  const float prev_gripper = s.gripper;
  s.agent = clamp_arena(s.agent + Vec2{kSpeed * kDt * a[0], kSpeed * kDt * a[1]});
  s.gripper = 0.5f * (a[2] + 1.0f);
  const bool closed = s.gripper < 0.5f;
  const bool closing = prev_gripper >= 0.5f && closed;

  switch (s.kind) {
    case TaskKind::kPush: {
      Vec2& obj = s.objects[0];
      const float d = dist(s.agent, obj);
      if (closed && d < s.params.contact_radius) {
        Vec2 dir = d > 1e-6f ? unit(obj - s.agent) : unit(s.agent - prev_agent);
        obj = clamp_arena(s.agent + s.params.contact_radius * dir);
        s.contact = true;
      }
      break;
    }
    case TaskKind::kPickPlace:
    case TaskKind::kFold:
    case TaskKind::kPickStir: {
      Vec2& obj = s.objects[0];
      if (s.held < 0 && closing && dist(s.agent, obj) < s.params.grasp_radius) s.held = 0;
      if (s.held >= 0 && !closed) {
        s.held = -1;
        s.released = true;
      }
      if (s.held >= 0) {
        if (s.kind == TaskKind::kFold) {
          obj.x = s.agent.x;  // the edge slides along its row only
        } else {
          obj = s.agent;
        }
      }
      break;
    }
    default:
      break;
  }

  if (s.kind == TaskKind::kStir || s.kind == TaskKind::kPickStir) {
    const bool holding = s.kind == TaskKind::kStir ? closed : s.held >= 0;
    const float r0 = dist(prev_agent, s.goal);
    const float r1 = dist(s.agent, s.goal);
    const float band = s.params.orbit_band, radius = s.params.orbit_radius;
    if (holding && std::abs(r0 - radius) < band && std::abs(r1 - radius) < band) {
      const Vec2 p0 = prev_agent - s.goal, p1 = s.agent - s.goal;
      s.orbit_progress += wrap_angle(std::atan2(p1.y, p1.x) - std::atan2(p0.y, p0.x));
    }
  }

  s.timestep += 1;
  s.phase = std::max(s.phase, compute_phase(s));
  s.success = s.success || is_success(s);
  return s;
}

bool is_success(const EnvState& s) {
  const auto& p = s.params;
  switch (s.kind) {
    case TaskKind::kReach:
      return dist(s.agent, s.goal) < p.goal_radius && s.gripper < 0.5f;
    case TaskKind::kTwoGoal:
      return (dist(s.agent, s.objects[0]) < p.goal_radius ||
              dist(s.agent, s.objects[1]) < p.goal_radius) &&
             s.gripper < 0.5f;
    case TaskKind::kPush:
      return dist(s.objects[0], s.goal) < p.place_radius;
    case TaskKind::kPickPlace:
      return s.released && s.held < 0 && dist(s.objects[0], s.goal) < p.place_radius;
    case TaskKind::kFold:
      return s.released && s.held < 0 && std::abs(s.objects[0].x - s.goal.x) < p.place_radius;
    case TaskKind::kStir:
      return s.orbit_progress >= 2.0f * kPi * p.orbit_turns;
    case TaskKind::kPickStir:
      return s.held >= 0 && s.orbit_progress >= 2.0f * kPi * p.orbit_turns;
  }
  return false;
}

Observation observe(const EnvState& s) {
  Observation o(kObsDim, 0.0f);
  o[0] = s.agent.x;
  o[1] = s.agent.y;
  o[2] = s.gripper;
  for (std::size_t i = 0; i < kMaxObjects; ++i) {
    o[3 + 2 * i] = s.objects[i].x;
    o[4 + 2 * i] = s.objects[i].y;
  }
  o[3 + 2 * kMaxObjects] = s.goal.x;
  o[4 + 2 * kMaxObjects] = s.goal.y;
  o[5 + 2 * kMaxObjects + static_cast<std::size_t>(s.task_id)] = 1.0f;
  return o;
}

int task_from_observation(const std::vector<float>& obs) {
  if (obs.size() != kObsDim) return -1;
  int found = -1;
  for (std::size_t i = 0; i < kTaskSlots; ++i) {
    const float v = obs[5 + 2 * kMaxObjects + i];
    if (v == 1.0f) {
      if (found >= 0) return -1;
      found = static_cast<int>(i);
    } else if (v != 0.0f) {
      return -1;
    }
  }
  return found;
}

Action demonstrator_action(const EnvState& s, int choice) {
  switch (s.kind) {
    case TaskKind::kReach:
    case TaskKind::kTwoGoal: {
      const Vec2 goal = s.kind == TaskKind::kReach ? s.goal : s.objects[choice == 0 ? 0 : 1];
      if (dist(s.agent, goal) > kArriveTol) return move_to(s, goal, kOpen);
      return hold(kClose);
    }
    case TaskKind::kPush: {
      const Vec2 obj = s.objects[0];
      const Vec2 u = unit(s.goal - obj);
      if (!s.contact) {
        const Vec2 pre = obj - (s.params.contact_radius + 0.04f) * u;
        if (dist(s.agent, pre) > kArriveTol) return move_to(s, pre, kOpen);
        if (s.gripper >= 0.5f) return hold(kClose);
      }
      if (dist(obj, s.goal) < 0.02f) return hold(kClose);
      // Aim slightly inside the object along the push line.
      return move_to(s, obj - (s.params.contact_radius - 0.05f) * u, kClose);
    }
    case TaskKind::kPickPlace:
    case TaskKind::kFold: {
      const Vec2 obj = s.objects[0];
      const Vec2 target = s.kind == TaskKind::kFold ? Vec2{s.goal.x, obj.y} : s.goal;
      if (s.released) return hold(kOpen);
      if (s.held < 0) {
        if (dist(s.agent, obj) > kArriveTol) return move_to(s, obj, kOpen);
        if (s.gripper < 0.5f) return hold(kOpen);  // reopen before retrying a grasp
        return hold(kClose);
      }
      if (dist(s.agent, target) > kArriveTol) return move_to(s, target, kClose);
      return hold(kOpen);
    }
    case TaskKind::kStir: {
      if (s.orbit_progress > 0.0f || (s.gripper < 0.5f && dist(s.agent, rim_start(s)) < 0.03f)) {
        return orbit_action(s);
      }
      if (dist(s.agent, rim_start(s)) > kArriveTol) return move_to(s, rim_start(s), kOpen);
      return hold(kClose);
    }
    case TaskKind::kPickStir: {
      const Vec2 obj = s.objects[0];
      if (s.held < 0) {
        if (dist(s.agent, obj) > kArriveTol) return move_to(s, obj, kOpen);
        if (s.gripper < 0.5f) return hold(kOpen);
        return hold(kClose);
      }
      // Carrying the object across the band can leave a small negative
      // progress; any accumulated angle means the orbit has begun.
      if (s.orbit_progress != 0.0f || dist(s.agent, rim_start(s)) < 0.03f) return orbit_action(s);
      return move_to(s, rim_start(s), kClose);
    }
  }
  return hold(kOpen);
}

std::vector<DemoPair> chunk_episode(const std::vector<EnvState>& states,
                                    const std::vector<Action>& actions) {
  std::vector<DemoPair> pairs;
  const std::size_t len = actions.size();
  if (len == 0) return pairs;
  const Action pad = hold(actions.back()[2]);
  for (std::size_t t = 0; t < len; t += kExecHorizon) {
    DemoPair p;
    p.observation = observe(states[t]);
    p.phase = states[t].phase;
    p.step = static_cast<int>(t);
    p.chunk.reserve(kChunkHorizon * kActionDim);
    for (std::size_t h = 0; h < kChunkHorizon; ++h) {
      const Action& a = t + h < len ? actions[t + h] : pad;
      p.chunk.insert(p.chunk.end(), a.begin(), a.end());
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

Demo scripted_demo(const TaskSpec& task, std::uint64_t episode_seed) {
  Demo demo;
  demo.initial = reset(task, episode_seed);
  Rng choice_rng(mix_seed(task.layout_seed_lo + episode_seed, 0xd3a0));
  demo.choice = task.kind == TaskKind::kTwoGoal ? (choice_rng.coin() ? 1 : 0) : 0;
  EnvState s = demo.initial;
  demo.states.push_back(s);
  while (!s.success && s.timestep < kMaxDemoSteps) {
    const Action a = demonstrator_action(s, demo.choice);
    demo.actions.push_back(a);
    s = step_env(s, a);
    demo.states.push_back(s);
  }
  demo.success = s.success;
  demo.pairs = chunk_episode(demo.states, demo.actions);
  return demo;
}

}  // namespace dibm::env
