#pragma once

// INI-style run configuration.
//
// Strict by design: unknown sections or keys, duplicate keys, malformed
// numbers and inconsistent cross-field values are all rejected, and every
// problem in a file is reported at once rather than only the first.
// serialize() writes all keys explicitly (defaults included) in a canonical
// order, so parse(serialize(c)) == c and serialized configs are diffable.
//
// Grammar: `[section]` headers, `key = value` entries, blank lines, and
// full-line comments starting with '#' or ';'.  Values run to end of line;
// list values are space-separated.  Mixture components use structured keys
// inside [teacher]: classK.compJ.weight / .mean (2 numbers) / .cov (upper
// triangle: cxx cxy cyy).

#include <cctype>
#include <cerrno>
#include <climits>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sfd/common.hpp"
#include "sfd/evaluator.hpp"
#include "sfd/gmm.hpp"
#include "sfd/losses.hpp"
#include "sfd/mlp.hpp"
#include "sfd/pretrain.hpp"
#include "sfd/run_io.hpp"
#include "sfd/schedule.hpp"
#include "sfd/trainer.hpp"

namespace sfd {

enum class RunMode { Joint, TwoStage, ScoreKl, DistillOnly };

inline std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::Joint:
      return "joint";
    case RunMode::TwoStage:
      return "two-stage";
    case RunMode::ScoreKl:
      return "kl";
    case RunMode::DistillOnly:
      return "distill-only";
  }
  fail_contract("to_string: bad RunMode");
}

inline std::optional<RunMode> parse_run_mode(const std::string& s) {
  if (s == "joint") return RunMode::Joint;
  if (s == "two-stage") return RunMode::TwoStage;
  if (s == "kl") return RunMode::ScoreKl;
  if (s == "distill-only") return RunMode::DistillOnly;
  return std::nullopt;
}

struct RunConfig {
  // [teacher]
  std::string teacher_backend = "analytic";  // "analytic" | "network"
  std::string teacher_checkpoint;            // network file, when backend = network
  int num_classes = 4;
  GmmSpec teacher = default_four_class_spec();

  // [teacher.pretrain]
  PretrainConfig pretrain;

  // [schedule]
  int sched_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  // [model]
  MlpArch arch;  // num_classes kept in sync with the teacher section
  WarmupConfig warmup;

  // [loss]
  SfdWeights weights;

  // [train]
  RunMode mode = RunMode::Joint;
  int steps = 20000;
  int stage1_steps = 15000;
  int stage2_steps = 5000;
  int batch = 128;
  double lr_theta = 1e-4;
  double lr_psi = 1e-4;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double ema_decay = 0.999;
  int t_min = 38;
  int t_max = 712;
  double sigma_init = 2.5;
  int forget_class = 0;
  int override_class = 1;
  std::uint64_t seed = 0;
  int checkpoint_interval = 5000;

  // [eval]
  EvalSettings eval;

  // [io]
  std::string out_root = "runs";
  std::string run_name;  // empty: derived from mode and seed

  // ---- assembly helpers --------------------------------------------------

  ClassRoles roles() const { return ClassRoles{num_classes, forget_class, override_class}; }

  Schedule make_schedule() const { return Schedule(sched_steps, beta_start, beta_end); }

  GmmTeacher make_teacher() const { return GmmTeacher(teacher); }

  TrainSettings train_settings() const {
    TrainSettings ts;
    ts.batch = batch;
    ts.lr_theta = lr_theta;
    ts.lr_psi = lr_psi;
    ts.adam_beta1 = adam_beta1;
    ts.adam_beta2 = adam_beta2;
    ts.adam_eps = adam_eps;
    ts.ema_decay = ema_decay;
    ts.t_min = t_min;
    ts.t_max = t_max;
    ts.sigma_init = sigma_init;
    ts.weights = weights;
    ts.roles = roles();
    ts.objective = mode == RunMode::ScoreKl ? TrainSettings::ThetaObjective::ScoreSpace
                                            : TrainSettings::ThetaObjective::Hybrid;
    return ts;
  }

  EvalSettings eval_settings() const {
    EvalSettings es = eval;
    es.seed = seed;  // evaluation streams derive from the run seed
    return es;
  }

  std::string resolved_run_name() const {
    return run_name.empty() ? cat(to_string(mode), "-seed", seed) : run_name;
  }

  std::int64_t total_steps() const {
    return mode == RunMode::TwoStage ? static_cast<std::int64_t>(stage1_steps) + stage2_steps : steps;
  }

  // ---- parse / serialize ---------------------------------------------------

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path) { return parse(read_text_file(path)); }
  void apply_override(const std::string& spec);
  std::string serialize() const;
  void validate() const;
};

namespace detail {

struct ConfigErrors {
  std::vector<std::string> list;

  template <typename... Args>
  void add(const Args&... args) {
    list.push_back(cat(args...));
  }

  void raise_if_any() const {
    if (list.empty()) {
      return;
    }
    std::string msg = cat("config: ", list.size(), " problem(s):");
    for (const std::string& e : list) {
      msg += "\n  - ";
      msg += e;
    }
    throw ContractError(msg);
  }
};

inline std::string trim(std::string s) {
  const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) {
    s.erase(s.begin());
  }
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) {
    s.pop_back();
  }
  return s;
}

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c)) != 0) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) {
    out.push_back(cur);
  }
  return out;
}

inline bool parse_double_token(const std::string& tok, double& out) {
  if (tok.empty()) {
    return false;
  }
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size() || errno == ERANGE) {
    return false;
  }
  out = v;
  return true;
}

inline bool parse_int_token(const std::string& tok, long long& out) {
  if (tok.empty()) {
    return false;
  }
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(tok.c_str(), &end, 10);
  if (end != tok.c_str() + tok.size() || errno == ERANGE) {
    return false;
  }
  out = v;
  return true;
}

inline bool parse_u64_token(const std::string& tok, std::uint64_t& out) {
  if (tok.empty() || tok.front() == '-') {
    return false;
  }
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(tok.c_str(), &end, 10);
  if (end != tok.c_str() + tok.size() || errno == ERANGE) {
    return false;
  }
  out = v;
  return true;
}

// Structured-key mixture assembly: classK.compJ.{weight,mean,cov} entries
// accumulate here, then build() checks completeness and contiguity.
struct MixtureBuilder {
  struct Partial {
    std::optional<double> weight;
    std::optional<Vec2> mean;
    std::optional<Mat2> cov;
  };
  std::map<std::pair<int, int>, Partial> parts;
  bool any = false;

  // Returns true when `key` is a structured mixture key (whether or not the
  // value parses; errors are reported through `errs`).
  bool consume(const std::string& key, const std::string& value, const std::string& where, ConfigErrors& errs) {
    if (key.rfind("class", 0) != 0) {
      return false;
    }
    std::size_t dot1 = key.find('.');
    std::size_t dot2 = key.find('.', dot1 == std::string::npos ? dot1 : dot1 + 1);
    if (dot1 == std::string::npos || dot2 == std::string::npos) {
      return false;
    }
    long long k = 0;
    long long j = 0;
    const std::string comp_part = key.substr(dot1 + 1, dot2 - dot1 - 1);
    if (!parse_int_token(key.substr(5, dot1 - 5), k) || comp_part.rfind("comp", 0) != 0 ||
        !parse_int_token(comp_part.substr(4), j)) {
      return false;
    }
    const std::string field = key.substr(dot2 + 1);
    if (field != "weight" && field != "mean" && field != "cov") {
      errs.add(where, ": unknown mixture field '", field, "' (expected weight, mean or cov)");
      return true;
    }
    any = true;
    if (k < 0 || j < 0) {
      errs.add(where, ": negative class or component index in '", key, "'");
      return true;
    }
    Partial& p = parts[{static_cast<int>(k), static_cast<int>(j)}];
    const std::vector<std::string> toks = split_ws(value);
    std::vector<double> nums(toks.size());
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (!parse_double_token(toks[i], nums[i])) {
        errs.add(where, ": '", toks[i], "' is not a number");
        return true;
      }
    }
    if (field == "weight") {
      if (nums.size() != 1) {
        errs.add(where, ": weight takes 1 number, got ", nums.size());
        return true;
      }
      p.weight = nums[0];
    } else if (field == "mean") {
      if (nums.size() != 2) {
        errs.add(where, ": mean takes 2 numbers, got ", nums.size());
        return true;
      }
      p.mean = Vec2{nums[0], nums[1]};
    } else {
      if (nums.size() != 3) {
        errs.add(where, ": cov takes 3 numbers (cxx cxy cyy), got ", nums.size());
        return true;
      }
      p.cov = Mat2{nums[0], nums[1], nums[1], nums[2]};
    }
    return true;
  }

  std::vector<std::vector<GmmComponent>> build(int num_classes, ConfigErrors& errs) const {
    std::vector<std::vector<GmmComponent>> classes(static_cast<std::size_t>(std::max(num_classes, 0)));
    for (const auto& [kj, p] : parts) {
      const auto [k, j] = kj;
      const std::string name = cat("[teacher] class", k, ".comp", j);
      if (k >= num_classes) {
        errs.add(name, ": class index exceeds num_classes = ", num_classes);
        continue;
      }
      if (!p.weight || !p.mean || !p.cov) {
        errs.add(name, ": needs all of weight, mean and cov");
        continue;
      }
      auto& cls = classes[static_cast<std::size_t>(k)];
      if (static_cast<int>(cls.size()) != j) {
        errs.add(name, ": component indices must be contiguous from 0");
        continue;
      }
      cls.push_back(GmmComponent{*p.weight, *p.mean, *p.cov});
    }
    for (int k = 0; k < num_classes; ++k) {
      if (classes[static_cast<std::size_t>(k)].empty()) {
        errs.add("[teacher]: class ", k, " has no components");
      }
    }
    return classes;
  }
};

}  // namespace detail

// Applies one key of one section onto the config.  `where` prefixes error
// messages (file:line or the override text).
namespace detail {

struct ConfigParser {
  RunConfig& cfg;
  ConfigErrors& errs;
  MixtureBuilder mixture{};
  std::set<std::string> seen{};
  bool priors_given = false;

  void set_value(const std::string& section, const std::string& key, const std::string& value,
                 const std::string& where) {
    if (!seen.insert(section + "/" + key).second) {
      errs.add(where, ": duplicate key '", key, "' in [", section, "]");
      return;
    }
    if (section == "teacher") {
      teacher_key(key, value, where);
    } else if (section == "teacher.pretrain") {
      pretrain_key(key, value, where);
    } else if (section == "schedule") {
      schedule_key(key, value, where);
    } else if (section == "model") {
      model_key(key, value, where);
    } else if (section == "loss") {
      loss_key(key, value, where);
    } else if (section == "train") {
      train_key(key, value, where);
    } else if (section == "eval") {
      eval_key(key, value, where);
    } else if (section == "io") {
      io_key(key, value, where);
    } else {
      errs.add(where, ": unknown section [", section, "]");
    }
  }

  void finish() {
    if (mixture.any) {
      GmmSpec spec;
      spec.classes = mixture.build(cfg.num_classes, errs);
      spec.priors = priors_given ? cfg.teacher.priors : std::vector<double>{};
      cfg.teacher = std::move(spec);
    }
    // Without mixture keys the default spec stays; priors (if given) re-weight it.
    cfg.arch.num_classes = cfg.num_classes;
  }

 private:
  bool to_int(const std::string& v, const std::string& where, int& out) {
    long long ll = 0;
    if (!parse_int_token(v, ll) || ll < INT_MIN || ll > INT_MAX) {
      errs.add(where, ": '", v, "' is not an integer");
      return false;
    }
    out = static_cast<int>(ll);
    return true;
  }

  bool to_double(const std::string& v, const std::string& where, double& out) {
    if (!parse_double_token(v, out)) {
      errs.add(where, ": '", v, "' is not a number");
      return false;
    }
    return true;
  }

  bool to_u64(const std::string& v, const std::string& where, std::uint64_t& out) {
    if (!parse_u64_token(v, out)) {
      errs.add(where, ": '", v, "' is not an unsigned integer");
      return false;
    }
    return true;
  }

  void unknown(const std::string& section, const std::string& key, const std::string& where) {
    errs.add(where, ": unknown key '", key, "' in [", section, "]");
  }

  void teacher_key(const std::string& key, const std::string& value, const std::string& where) {
    if (key == "backend") {
      if (value != "analytic" && value != "network") {
        errs.add(where, ": backend must be 'analytic' or 'network', got '", value, "'");
      } else {
        cfg.teacher_backend = value;
      }
    } else if (key == "checkpoint") {
      cfg.teacher_checkpoint = value;
    } else if (key == "num_classes") {
      to_int(value, where, cfg.num_classes);
    } else if (key == "priors") {
      std::vector<double> priors;
      for (const std::string& tok : split_ws(value)) {
        double d = 0.0;
        if (!to_double(tok, where, d)) {
          return;
        }
        priors.push_back(d);
      }
      cfg.teacher.priors = std::move(priors);
      priors_given = true;
    } else if (!mixture.consume(key, value, where, errs)) {
      unknown("teacher", key, where);
    }
  }

  void pretrain_key(const std::string& key, const std::string& value, const std::string& where) {
    if (key == "steps") {
      to_int(value, where, cfg.pretrain.steps);
    } else if (key == "batch") {
      to_int(value, where, cfg.pretrain.batch);
    } else if (key == "lr") {
      to_double(value, where, cfg.pretrain.lr);
    } else if (key == "lr_final") {
      to_double(value, where, cfg.pretrain.lr_final);
    } else if (key == "beta1") {
      to_double(value, where, cfg.pretrain.beta1);
    } else if (key == "t_lo") {
      to_int(value, where, cfg.pretrain.t_lo);
    } else if (key == "t_hi") {
      to_int(value, where, cfg.pretrain.t_hi);
    } else if (key == "seed") {
      to_u64(value, where, cfg.pretrain.seed);
    } else {
      unknown("teacher.pretrain", key, where);
    }
  }

  void schedule_key(const std::string& key, const std::string& value, const std::string& where) {
    if (key == "steps") {
      to_int(value, where, cfg.sched_steps);
    } else if (key == "beta_start") {
      to_double(value, where, cfg.beta_start);
    } else if (key == "beta_end") {
      to_double(value, where, cfg.beta_end);
    } else {
      unknown("schedule", key, where);
    }
  }

  void model_key(const std::string& key, const std::string& value, const std::string& where) {
    if (key == "class_embed_dim") {
      to_int(value, where, cfg.arch.class_embed_dim);
    } else if (key == "time_embed_dim") {
      to_int(value, where, cfg.arch.time_embed_dim);
    } else if (key == "hidden") {
      std::vector<int> hidden;
      for (const std::string& tok : split_ws(value)) {
        int h = 0;
        if (!to_int(tok, where, h)) {
          return;
        }
        hidden.push_back(h);
      }
      if (hidden.empty()) {
        errs.add(where, ": hidden needs at least one layer width");
      } else {
        cfg.arch.hidden = std::move(hidden);
      }
    } else if (key == "warmup_steps") {
      to_int(value, where, cfg.warmup.steps);
    } else if (key == "warmup_batch") {
      to_int(value, where, cfg.warmup.batch);
    } else if (key == "warmup_lr") {
      to_double(value, where, cfg.warmup.lr);
    } else if (key == "warmup_beta1") {
      to_double(value, where, cfg.warmup.beta1);
    } else if (key == "warmup_radius") {
      to_double(value, where, cfg.warmup.radius);
    } else if (key == "warmup_seed") {
      to_u64(value, where, cfg.warmup.seed);
    } else {
      unknown("model", key, where);
    }
  }

  void loss_key(const std::string& key, const std::string& value, const std::string& where) {
    if (key == "lambda_psi") {
      to_double(value, where, cfg.weights.lambda_psi);
    } else if (key == "mu_psi") {
      to_double(value, where, cfg.weights.mu_psi);
    } else if (key == "lambda_theta") {
      to_double(value, where, cfg.weights.lambda_theta);
    } else if (key == "mu_theta") {
      to_double(value, where, cfg.weights.mu_theta);
    } else if (key == "alpha") {
      to_double(value, where, cfg.weights.alpha);
    } else if (key == "omega_c") {
      to_double(value, where, cfg.weights.omega_c);
    } else if (key == "omega_clamp") {
      to_double(value, where, cfg.weights.omega_clamp);
    } else {
      unknown("loss", key, where);
    }
  }

  void train_key(const std::string& key, const std::string& value, const std::string& where) {
    if (key == "mode") {
      const std::optional<RunMode> m = parse_run_mode(value);
      if (!m) {
        errs.add(where, ": mode must be joint, two-stage, kl or distill-only, got '", value, "'");
      } else {
        cfg.mode = *m;
      }
    } else if (key == "steps") {
      to_int(value, where, cfg.steps);
    } else if (key == "stage1_steps") {
      to_int(value, where, cfg.stage1_steps);
    } else if (key == "stage2_steps") {
      to_int(value, where, cfg.stage2_steps);
    } else if (key == "batch") {
      to_int(value, where, cfg.batch);
    } else if (key == "lr_theta") {
      to_double(value, where, cfg.lr_theta);
    } else if (key == "lr_psi") {
      to_double(value, where, cfg.lr_psi);
    } else if (key == "adam_beta1") {
      to_double(value, where, cfg.adam_beta1);
    } else if (key == "adam_beta2") {
      to_double(value, where, cfg.adam_beta2);
    } else if (key == "adam_eps") {
      to_double(value, where, cfg.adam_eps);
    } else if (key == "ema_decay") {
      to_double(value, where, cfg.ema_decay);
    } else if (key == "t_min") {
      to_int(value, where, cfg.t_min);
    } else if (key == "t_max") {
      to_int(value, where, cfg.t_max);
    } else if (key == "sigma_init") {
      to_double(value, where, cfg.sigma_init);
    } else if (key == "forget_class") {
      to_int(value, where, cfg.forget_class);
    } else if (key == "override_class") {
      to_int(value, where, cfg.override_class);
    } else if (key == "seed") {
      to_u64(value, where, cfg.seed);
    } else if (key == "checkpoint_interval") {
      to_int(value, where, cfg.checkpoint_interval);
    } else {
      unknown("train", key, where);
    }
  }

  void eval_key(const std::string& key, const std::string& value, const std::string& where) {
    if (key == "interval") {
      to_int(value, where, cfg.eval.interval);
    } else if (key == "samples") {
      to_int(value, where, cfg.eval.samples);
    } else if (key == "pr_samples") {
      to_int(value, where, cfg.eval.pr_samples);
    } else if (key == "knn_k") {
      to_int(value, where, cfg.eval.knn_k);
    } else if (key == "floor_trials") {
      to_int(value, where, cfg.eval.floor_trials);
    } else {
      unknown("eval", key, where);
    }
  }

  void io_key(const std::string& key, const std::string& value, const std::string& where) {
    if (key == "out_root") {
      cfg.out_root = value;
    } else if (key == "run_name") {
      cfg.run_name = value;
    } else {
      unknown("io", key, where);
    }
  }
};

}  // namespace detail

inline RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  detail::ConfigErrors errs;
  detail::ConfigParser parser{cfg, errs};

  std::string section;
  int lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line.front() == '#' || line.front() == ';') {
      continue;
    }
    const std::string where = cat("line ", lineno);
    if (line.front() == '[') {
      if (line.back() != ']') {
        errs.add(where, ": malformed section header '", line, "'");
        continue;
      }
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty()) {
        errs.add(where, ": empty section name");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      errs.add(where, ": expected 'key = value', got '", line, "'");
      continue;
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) {
      errs.add(where, ": empty key");
      continue;
    }
    if (section.empty()) {
      errs.add(where, ": key '", key, "' appears before any [section]");
      continue;
    }
    parser.set_value(section, key, value, where);
  }
  parser.finish();
  errs.raise_if_any();
  cfg.validate();
  return cfg;
}

inline void RunConfig::apply_override(const std::string& spec) {
  const std::size_t eq = spec.find('=');
  if (eq == std::string::npos) {
    fail_contract("override '", spec, "': expected section.key=value");
  }
  const std::string dotted = detail::trim(spec.substr(0, eq));
  const std::string value = detail::trim(spec.substr(eq + 1));
  static const std::vector<std::string> kSections = {"teacher.pretrain", "teacher", "schedule", "model",
                                                     "loss",             "train",   "eval",     "io"};
  for (const std::string& section : kSections) {
    if (dotted.rfind(section + ".", 0) == 0 && dotted.size() > section.size() + 1) {
      const std::string key = dotted.substr(section.size() + 1);
      if (section == "teacher" && key.rfind("class", 0) == 0) {
        fail_contract("override '", spec, "': mixture components can only be set in a config file");
      }
      detail::ConfigErrors errs;
      detail::ConfigParser parser{*this, errs};
      parser.set_value(section, key, value, cat("override '", spec, "'"));
      errs.raise_if_any();
      arch.num_classes = num_classes;
      return;
    }
  }
  fail_contract("override '", spec, "': no known section prefix");
}

inline void RunConfig::validate() const {
  detail::ConfigErrors errs;
  if (num_classes < 2) {
    errs.add("[teacher] num_classes must be >= 2, got ", num_classes);
  }
  if (teacher_backend == "network" && teacher_checkpoint.empty()) {
    errs.add("[teacher] backend = network requires a checkpoint path");
  }
  if (static_cast<int>(teacher.classes.size()) != num_classes) {
    errs.add("[teacher] spec covers ", teacher.classes.size(), " classes but num_classes = ", num_classes);
  }
  if (!teacher.priors.empty() && static_cast<int>(teacher.priors.size()) != num_classes) {
    errs.add("[teacher] priors list ", teacher.priors.size(), " entries for ", num_classes, " classes");
  }
  if (sched_steps < 2) {
    errs.add("[schedule] steps must be >= 2, got ", sched_steps);
  }
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || !(beta_start <= beta_end)) {
    errs.add("[schedule] betas must satisfy 0 < beta_start <= beta_end < 1");
  }
  if (steps < 1 || stage1_steps < 1 || stage2_steps < 1) {
    errs.add("[train] step counts must be positive");
  }
  if (t_min < 0 || t_max >= sched_steps || t_min >= t_max) {
    errs.add("[train] need 0 <= t_min < t_max < schedule steps, got [", t_min, ", ", t_max, "] with ",
             sched_steps, " steps");
  }
  if (forget_class < 0 || forget_class >= num_classes) {
    errs.add("[train] forget_class ", forget_class, " outside [0, ", num_classes, ")");
  }
  if (override_class < 0 || override_class >= num_classes || override_class == forget_class) {
    errs.add("[train] override_class must name a kept class, got ", override_class);
  }
  if (checkpoint_interval < 0) {
    errs.add("[train] checkpoint_interval must be >= 0");
  }
  if (eval.interval < 1) {
    errs.add("[eval] interval must be positive");
  }
  errs.raise_if_any();

  // Delegated validation (throws ContractError with its own message).
  pretrain.validate(sched_steps);
  warmup.validate();
  weights.validate();
  arch.validate();
  eval.validate();
  train_settings().validate();
}

inline std::string RunConfig::serialize() const {
  std::string s;
  const auto kv = [&s](const char* key, const std::string& value) { s += cat(key, " = ", value, "\n"); };
  const auto kvi = [&kv](const char* key, long long v) { kv(key, cat(v)); };
  const auto kvd = [&kv](const char* key, double v) { kv(key, format_double(v)); };

  s += "[teacher]\n";
  kv("backend", teacher_backend);
  kv("checkpoint", teacher_checkpoint);
  kvi("num_classes", num_classes);
  if (!teacher.priors.empty()) {
    std::string p;
    for (std::size_t i = 0; i < teacher.priors.size(); ++i) {
      p += cat(i == 0 ? "" : " ", format_double(teacher.priors[i]));
    }
    kv("priors", p);
  }
  for (std::size_t k = 0; k < teacher.classes.size(); ++k) {
    for (std::size_t j = 0; j < teacher.classes[k].size(); ++j) {
      const GmmComponent& c = teacher.classes[k][j];
      const std::string base = cat("class", k, ".comp", j);
      kv(cat(base, ".weight").c_str(), format_double(c.weight));
      kv(cat(base, ".mean").c_str(), cat(format_double(c.mean.x), " ", format_double(c.mean.y)));
      kv(cat(base, ".cov").c_str(),
         cat(format_double(c.cov.a), " ", format_double(c.cov.b), " ", format_double(c.cov.d)));
    }
  }

  s += "\n[teacher.pretrain]\n";
  kvi("steps", pretrain.steps);
  kvi("batch", pretrain.batch);
  kvd("lr", pretrain.lr);
  kvd("lr_final", pretrain.lr_final);
  kvd("beta1", pretrain.beta1);
  kvi("t_lo", pretrain.t_lo);
  kvi("t_hi", pretrain.t_hi);
  kv("seed", cat(pretrain.seed));

  s += "\n[schedule]\n";
  kvi("steps", sched_steps);
  kvd("beta_start", beta_start);
  kvd("beta_end", beta_end);

  s += "\n[model]\n";
  kvi("class_embed_dim", arch.class_embed_dim);
  kvi("time_embed_dim", arch.time_embed_dim);
  {
    std::string h;
    for (std::size_t i = 0; i < arch.hidden.size(); ++i) {
      h += cat(i == 0 ? "" : " ", arch.hidden[i]);
    }
    kv("hidden", h);
  }
  kvi("warmup_steps", warmup.steps);
  kvi("warmup_batch", warmup.batch);
  kvd("warmup_lr", warmup.lr);
  kvd("warmup_beta1", warmup.beta1);
  kvd("warmup_radius", warmup.radius);
  kv("warmup_seed", cat(warmup.seed));

  s += "\n[loss]\n";
  kvd("lambda_psi", weights.lambda_psi);
  kvd("mu_psi", weights.mu_psi);
  kvd("lambda_theta", weights.lambda_theta);
  kvd("mu_theta", weights.mu_theta);
  kvd("alpha", weights.alpha);
  kvd("omega_c", weights.omega_c);
  kvd("omega_clamp", weights.omega_clamp);

  s += "\n[train]\n";
  kv("mode", to_string(mode));
  kvi("steps", steps);
  kvi("stage1_steps", stage1_steps);
  kvi("stage2_steps", stage2_steps);
  kvi("batch", batch);
  kvd("lr_theta", lr_theta);
  kvd("lr_psi", lr_psi);
  kvd("adam_beta1", adam_beta1);
  kvd("adam_beta2", adam_beta2);
  kvd("adam_eps", adam_eps);
  kvd("ema_decay", ema_decay);
  kvi("t_min", t_min);
  kvi("t_max", t_max);
  kvd("sigma_init", sigma_init);
  kvi("forget_class", forget_class);
  kvi("override_class", override_class);
  kv("seed", cat(seed));
  kvi("checkpoint_interval", checkpoint_interval);

  s += "\n[eval]\n";
  kvi("interval", eval.interval);
  kvi("samples", eval.samples);
  kvi("pr_samples", eval.pr_samples);
  kvi("knn_k", eval.knn_k);
  kvi("floor_trials", eval.floor_trials);

  s += "\n[io]\n";
  kv("out_root", out_root);
  kv("run_name", run_name);
  return s;
}

}  // namespace sfd
