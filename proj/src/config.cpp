#include "dibm/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dibm/errors.hpp"

namespace dibm {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_integer(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key, "expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_integer<int>(key, trim(item)));
  return out;
}

std::string fmt_double(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

}  // namespace

void set_field(TrainConfig& c, const std::string& key, const std::string& v) {
  using U = std::size_t;
  if (key == "method") c.method = v;
  else if (key == "num_experts") c.num_experts = parse_integer<U>(key, v);
  else if (key == "samples_per_expert") c.samples_per_expert = parse_integer<U>(key, v);
  else if (key == "gating_batch") c.gating_batch = parse_integer<U>(key, v);
  else if (key == "expert_batch") c.expert_batch = parse_integer<U>(key, v);
  else if (key == "buffer_capacity") c.buffer_capacity = parse_integer<U>(key, v);
  else if (key == "beta") c.beta = parse_double(key, v);
  else if (key == "gamma") c.gamma = parse_double(key, v);
  else if (key == "train_steps") c.train_steps = parse_integer<int>(key, v);
  else if (key == "inference_steps") c.inference_steps = parse_integer<int>(key, v);
  else if (key == "per_sample_k") c.per_sample_k = parse_bool(key, v);
  else if (key == "lr") c.lr = parse_double(key, v);
  else if (key == "weight_decay") c.weight_decay = parse_double(key, v);
  else if (key == "epochs") c.epochs = parse_integer<int>(key, v);
  else if (key == "iterations") c.iterations = parse_integer<int>(key, v);
  else if (key == "seed") c.seed = parse_integer<std::uint64_t>(key, v);
  else if (key == "kl_every") c.kl_every = parse_integer<int>(key, v);
  else if (key == "width") c.width = parse_integer<U>(key, v);
  else if (key == "cond_dim") c.cond_dim = parse_integer<U>(key, v);
  else if (key == "num_blocks") c.num_blocks = parse_integer<U>(key, v);
  else if (key == "moe_every") c.moe_every = parse_integer<U>(key, v);
  else if (key == "gating_hidden") c.gating_hidden = parse_integer<U>(key, v);
  else if (key == "gating_layers") c.gating_layers = parse_integer<U>(key, v);
  else if (key == "activation") {
    try {
      c.activation = activation_from_name(v);
    } catch (const std::exception&) {
      throw ConfigError(key, "unknown activation '" + v + "'");
    }
  } else if (key == "log_partition_samples") c.log_partition_samples = parse_integer<U>(key, v);
  else if (key == "sample_expert") c.sample_expert = parse_bool(key, v);
  else if (key == "dp_batch") c.dp_batch = parse_integer<U>(key, v);
  else if (key == "balance_weight") c.balance_weight = parse_double(key, v);
  else if (key == "task_assignment") c.task_assignment = parse_int_list(key, v);
  else throw ConfigError(key, "unknown field");
}

void validate(const TrainConfig& c) {
  if (c.method != "dibm" && c.method != "dp" && c.method != "vanilla_moe" &&
      c.method != "taskwise_moe") {
    throw ConfigError("method", "must be one of dibm, dp, vanilla_moe, taskwise_moe");
  }
  if (c.num_experts < 1) throw ConfigError("num_experts", "must be at least 1");
  if (c.method == "dp" && c.num_experts != 1) throw ConfigError("num_experts", "dp uses exactly 1 expert");
  if (c.gating_batch < 1) throw ConfigError("gating_batch", "must be at least 1");
  if (c.samples_per_expert < 1 || c.samples_per_expert > c.gating_batch) {
    throw ConfigError("samples_per_expert", "must satisfy 1 <= S <= gating_batch");
  }
  if (c.expert_batch < 1 || c.expert_batch > c.buffer_capacity) {
    throw ConfigError("expert_batch", "must satisfy 1 <= B' <= buffer_capacity");
  }
  if (!(c.beta > 0.0)) throw ConfigError("beta", "must be positive");
  if (c.gamma < 0.0) throw ConfigError("gamma", "must be non-negative");
  if (c.train_steps < 2) throw ConfigError("train_steps", "must be at least 2");
  if (c.inference_steps < 1 || c.inference_steps > c.train_steps) {
    throw ConfigError("inference_steps", "must satisfy 1 <= steps <= train_steps");
  }
  if (!(c.lr > 0.0)) throw ConfigError("lr", "must be positive");
  if (c.weight_decay < 0.0) throw ConfigError("weight_decay", "must be non-negative");
  if (c.epochs < 0) throw ConfigError("epochs", "must be non-negative");
  if (c.iterations < 0) throw ConfigError("iterations", "must be non-negative");
  if (c.kl_every < 0) throw ConfigError("kl_every", "must be non-negative");
  if (c.width < 2 || c.width % 2 != 0) throw ConfigError("width", "must be even and at least 2");
  if (c.cond_dim < 1) throw ConfigError("cond_dim", "must be at least 1");
  if (c.num_blocks < 1) throw ConfigError("num_blocks", "must be at least 1");
  if (c.moe_every < 1 || c.moe_every > c.num_blocks) {
    throw ConfigError("moe_every", "must satisfy 1 <= moe_every <= num_blocks");
  }
  if (c.gating_hidden < 1) throw ConfigError("gating_hidden", "must be at least 1");
  if (c.dp_batch < 1) throw ConfigError("dp_batch", "must be at least 1");
  if (c.balance_weight < 0.0) throw ConfigError("balance_weight", "must be non-negative");
  for (int e : c.task_assignment) {
    if (c.method != "taskwise_moe") break;
    if (e < 0 || static_cast<std::size_t>(e) >= c.num_experts) {
      throw ConfigError("task_assignment", "expert id " + std::to_string(e) + " out of range");
    }
  }
}

int resolve_iterations(const TrainConfig& c, std::size_t n) {
  if (c.iterations > 0) return c.iterations;
  const std::size_t batch = c.method == "dibm" ? c.gating_batch : c.dp_batch;
  const std::size_t per_epoch = (n + batch - 1) / batch;
  return static_cast<int>(per_epoch * static_cast<std::size_t>(c.epochs));
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
    }
    set_field(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  validate(base);
  return base;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const TrainConfig& c) {
  std::ostringstream os;
  os << "method = " << c.method << "\n"
     << "num_experts = " << c.num_experts << "\n"
     << "samples_per_expert = " << c.samples_per_expert << "\n"
     << "gating_batch = " << c.gating_batch << "\n"
     << "expert_batch = " << c.expert_batch << "\n"
     << "buffer_capacity = " << c.buffer_capacity << "\n"
     << "beta = " << fmt_double(c.beta) << "\n"
     << "gamma = " << fmt_double(c.gamma) << "\n"
     << "train_steps = " << c.train_steps << "\n"
     << "inference_steps = " << c.inference_steps << "\n"
     << "per_sample_k = " << (c.per_sample_k ? "true" : "false") << "\n"
     << "lr = " << fmt_double(c.lr) << "\n"
     << "weight_decay = " << fmt_double(c.weight_decay) << "\n"
     << "epochs = " << c.epochs << "\n"
     << "iterations = " << c.iterations << "\n"
     << "seed = " << c.seed << "\n"
     << "kl_every = " << c.kl_every << "\n"
     << "width = " << c.width << "\n"
     << "cond_dim = " << c.cond_dim << "\n"
     << "num_blocks = " << c.num_blocks << "\n"
     << "moe_every = " << c.moe_every << "\n"
     << "gating_hidden = " << c.gating_hidden << "\n"
     << "gating_layers = " << c.gating_layers << "\n"
     << "activation = " << activation_name(c.activation) << "\n"
     << "log_partition_samples = " << c.log_partition_samples << "\n"
     << "sample_expert = " << (c.sample_expert ? "true" : "false") << "\n"
     << "dp_batch = " << c.dp_batch << "\n"
     << "balance_weight = " << fmt_double(c.balance_weight) << "\n"
     << "task_assignment = ";
  for (std::size_t i = 0; i < c.task_assignment.size(); ++i) {
    os << (i ? "," : "") << c.task_assignment[i];
  }
  os << "\n";
  return os.str();
}

}  // namespace dibm
