#pragma once

// Run-directory bookkeeping: metrics.jsonl, summary.json, sample/curve CSV
// exports, and resume-time log truncation.
//
// Every number is printed with shortest-round-trip formatting and keys are
// emitted in a fixed order, so logs from identical runs compare byte-equal.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sfd/common.hpp"
#include "sfd/evaluator.hpp"
#include "sfd/gmm.hpp"
#include "sfd/tensor.hpp"

namespace sfd {

namespace fs = std::filesystem;

struct RunPaths {
  fs::path root;

  fs::path config() const { return root / "config.ini"; }
  fs::path run_info() const { return root / "run.json"; }
  fs::path metrics() const { return root / "metrics.jsonl"; }
  fs::path summary() const { return root / "summary.json"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path samples() const { return root / "samples_final.csv"; }
  fs::path checkpoint_file(std::int64_t step) const {
    return checkpoints() / cat("step_", step, ".ckpt");
  }

  void create() const {
    std::error_code ec;
    fs::create_directories(checkpoints(), ec);
    if (ec) {
      fail_io("cannot create run directory ", checkpoints().string(), ": ", ec.message());
    }
  }
};

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    fail_io("cannot open ", path.string(), " for writing");
  }
  out << text;
  if (!out) {
    fail_io("short write to ", path.string());
  }
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail_io("cannot open ", path.string(), " for reading");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// One metrics record.  Key order is fixed by construction (manual assembly,
// not a map), making the line a deterministic function of the snapshot.
inline std::string metrics_line(const EvalSnapshot& snap) {
  std::string s = "{";
  const auto field = [&s](const char* key, const std::string& value, bool first = false) {
    if (!first) {
      s += ',';
    }
    s += '"';
    s += key;
    s += "\":";
    s += value;
  };
  field("step", cat(snap.step), true);
  field("kimgs", format_double(snap.kimgs));
  field("unlearn_accuracy", format_double(snap.unlearning.accuracy));
  field("override_rate", format_double(snap.unlearning.override_rate));
  field("loss_psi", format_double(snap.loss_psi));
  field("loss_theta", format_double(snap.loss_theta));
  field("loss_remain", format_double(snap.loss_remain));
  field("loss_forget", format_double(snap.loss_forget));
  for (const ClassMetrics& cm : snap.remaining) {
    field(cat("frechet_c", cm.cls).c_str(), format_double(cm.frechet));
    field(cat("precision_c", cm.cls).c_str(), format_double(cm.precision));
    field(cat("recall_c", cm.cls).c_str(), format_double(cm.recall));
  }
  s += '}';
  return s;
}

class MetricsLog {
 public:
  explicit MetricsLog(fs::path path) : path_(std::move(path)) {}

  void append(const EvalSnapshot& snap) {
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) {
      fail_io("cannot append to ", path_.string());
    }
    out << metrics_line(snap) << '\n';
    if (!out) {
      fail_io("short write to ", path_.string());
    }
  }

  // Drops records past `step` so a resumed run appends exactly where the
  // checkpoint left off.
  void truncate_after(std::int64_t step) const {
    if (!fs::exists(path_)) {
      return;
    }
    std::istringstream in(read_text_file(path_));
    std::string kept;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) {
        continue;
      }
      const nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
      if (rec.is_discarded() || !rec.contains("step")) {
        fail_io("unparseable record in ", path_.string(), ": ", line);
      }
      if (rec["step"].get<std::int64_t>() <= step) {
        kept += line;
        kept += '\n';
      }
    }
    write_text_file(path_, kept);
  }

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// Parses every record of a metrics log, in order.
inline std::vector<nlohmann::json> read_metrics(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded()) {
      fail_io("unparseable record in ", path.string(), ": ", line);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline void write_samples_csv(const fs::path& path, const std::vector<std::pair<int, Tensor>>& by_class) {
  std::string s = "class,x,y\n";
  for (const auto& [cls, pts] : by_class) {
    for (int i = 0; i < pts.rows(); ++i) {
      s += cat(cls, ",", format_double(pts.at(i, 0)), ",", format_double(pts.at(i, 1)), "\n");
    }
  }
  write_text_file(path, s);
}

// Curve exports: one CSV per quantity family, rows ordered by step.
inline void export_curves_csv(const std::vector<nlohmann::json>& records, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    fail_io("cannot create ", out_dir.string(), ": ", ec.message());
  }

  // Collect per-class column suffixes present in the log (stable order).
  std::vector<int> classes;
  if (!records.empty()) {
    for (const auto& [key, value] : records.front().items()) {
      if (key.rfind("frechet_c", 0) == 0) {
        classes.push_back(std::stoi(key.substr(9)));
      }
    }
  }

  const auto num = [](const nlohmann::json& rec, const std::string& key) {
    if (!rec.contains(key)) {
      fail_io("metrics record lacks key ", key);
    }
    return format_double(rec[key].get<double>());
  };

  std::string ua = "step,kimgs,unlearn_accuracy,override_rate\n";
  std::string loss = "step,kimgs,loss_psi,loss_theta,loss_remain,loss_forget\n";
  std::string frechet = "step,kimgs";
  for (int c : classes) {
    frechet += cat(",frechet_c", c, ",precision_c", c, ",recall_c", c);
  }
  frechet += '\n';
  for (const nlohmann::json& rec : records) {
    const std::string step = cat(rec["step"].get<std::int64_t>());
    const std::string kimgs = num(rec, "kimgs");
    ua += cat(step, ",", kimgs, ",", num(rec, "unlearn_accuracy"), ",", num(rec, "override_rate"), "\n");
    loss += cat(step, ",", kimgs, ",", num(rec, "loss_psi"), ",", num(rec, "loss_theta"), ",",
                num(rec, "loss_remain"), ",", num(rec, "loss_forget"), "\n");
    frechet += cat(step, ",", kimgs);
    for (int c : classes) {
      frechet += cat(",", num(rec, cat("frechet_c", c)), ",", num(rec, cat("precision_c", c)), ",",
                     num(rec, cat("recall_c", c)));
    }
    frechet += '\n';
  }
  write_text_file(out_dir / "unlearning_curve.csv", ua);
  write_text_file(out_dir / "loss_curves.csv", loss);
  write_text_file(out_dir / "fidelity_curves.csv", frechet);
}

// Side-by-side unlearning curves for several runs (e.g. objectives compared
// on one axis).  Missing steps are left empty.
inline void export_comparison_csv(const std::vector<std::pair<std::string, fs::path>>& runs,
                                  const fs::path& out_file) {
  std::map<std::int64_t, std::vector<std::string>> rows;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (const nlohmann::json& rec : read_metrics(runs[i].second)) {
      auto& row = rows[rec["step"].get<std::int64_t>()];
      row.resize(runs.size());
      row[i] = format_double(rec["unlearn_accuracy"].get<double>());
    }
  }
  std::string s = "step";
  for (const auto& [name, path] : runs) {
    s += cat(",", name);
  }
  s += '\n';
  for (const auto& [step, cells] : rows) {
    s += cat(step);
    for (std::size_t i = 0; i < runs.size(); ++i) {
      s += cat(",", i < cells.size() ? cells[i] : std::string());
    }
    s += '\n';
  }
  write_text_file(out_file, s);
}

}  // namespace sfd
