#pragma once
// Synthetic 2D multi-task manipulation suite with scripted demonstrators.
//
// Arena is [-1,1]^2. The agent is a point gripper that moves at most
// kSpeed * kDt per step and carries a gripper opening in [0,1]. Each task has
// explicit phases so that per-phase expert usage can be measured.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace dibm::env {

inline constexpr std::size_t kActionDim = 3;  // vx, vy, gripper command
inline constexpr std::size_t kMaxObjects = 2;
inline constexpr std::size_t kTaskSlots = 7;  // 6 suite tasks + 1 held-out
inline constexpr std::size_t kObsDim = 2 + 1 + 2 * kMaxObjects + 2 + kTaskSlots;
inline constexpr std::size_t kChunkHorizon = 8;
inline constexpr std::size_t kExecHorizon = 4;
inline constexpr float kDt = 0.05f;
inline constexpr float kSpeed = 1.0f;
inline constexpr float kArena = 1.0f;
inline constexpr int kMaxDemoSteps = 300;

struct Vec2 {
  float x = 0.0f;
  float y = 0.0f;
};

enum class TaskKind { kReach, kPush, kPickPlace, kTwoGoal, kFold, kStir, kPickStir };

std::string task_kind_name(TaskKind kind);

struct SuccessParams {
  float goal_radius = 0.06f;     // agent-to-goal tolerance (reach-like tasks)
  float place_radius = 0.08f;    // object-to-target tolerance
  float grasp_radius = 0.06f;    // gripper closes within this distance to grasp
  float contact_radius = 0.08f;  // pusher contact distance
  float orbit_radius = 0.2f;
  float orbit_band = 0.08f;      // |r - orbit_radius| tolerance while stirring
  float orbit_turns = 1.0f;
};

struct TaskSpec {
  int task_id = 0;
  std::string name;
  TaskKind kind = TaskKind::kReach;
  int phase_count = 2;
  std::uint64_t layout_seed_lo = 0;  // [lo, hi) range of layout seeds
  std::uint64_t layout_seed_hi = 0;
  SuccessParams success;
};

struct EnvState {
  TaskKind kind = TaskKind::kReach;
  int task_id = 0;
  SuccessParams params;
  Vec2 agent;
  float gripper = 1.0f;  // open fraction
  std::array<Vec2, kMaxObjects> objects{};
  Vec2 goal;
  int held = -1;  // index of the carried object, -1 if none
  bool contact = false;
  bool released = false;  // an object was carried and then let go
  float orbit_progress = 0.0f;  // signed accumulated angle around the goal
  int phase = 0;
  int timestep = 0;
  bool success = false;
};

using Action = std::array<float, kActionDim>;
using Observation = std::vector<float>;

/// One (observation, action chunk) training pair; the chunk is H*A row-major.
struct DemoPair {
  Observation observation;
  std::vector<float> chunk;
  int phase = 0;
  int step = 0;
};

struct Demo {
  EnvState initial;
  std::vector<Action> actions;
  std::vector<EnvState> states;  // states[t] is the state before actions[t]
  std::vector<DemoPair> pairs;
  bool success = false;
  int choice = 0;  // demonstrator mode (two-goal task: 0 left, 1 right)
};

// The six-task training suite, task ids 0..5.
std::vector<TaskSpec> build_suite(std::uint64_t seed);
// Task id 6 (pick an object, carry it to a cup, stir), absent from the suite.
TaskSpec held_out_task(std::uint64_t seed);

EnvState reset(const TaskSpec& task, std::uint64_t episode_seed);
// Actions outside [-1,1] are clamped. Pure: returns the successor state.
EnvState step_env(const EnvState& state, const Action& action);
Observation observe(const EnvState& state);
bool is_success(const EnvState& state);

// Oracle controller; `choice` selects the mode on multimodal tasks.
Action demonstrator_action(const EnvState& state, int choice);
Demo scripted_demo(const TaskSpec& task, std::uint64_t episode_seed);

// Overlapping chunks with stride kExecHorizon; steps past the end repeat a
// zero-velocity action holding the last gripper command.
std::vector<DemoPair> chunk_episode(const std::vector<EnvState>& states,
                                    const std::vector<Action>& actions);

// Task index encoded in the observation's one-hot, or -1 if not exactly one-hot.
int task_from_observation(const std::vector<float>& obs);

}  // namespace dibm::env
