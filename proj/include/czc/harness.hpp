#pragma once

// Experiment harness: flat key=value configs with override merging, the
// end-to-end run orchestration, and report/CSV/JSON/SVG emission.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "czc/cil.hpp"

namespace czc {

// ---------------------------------------------------------------------------
// Configuration

struct ExperimentConfig {
  std::string dataset;  // dataset root directory (required)
  std::string out;      // output directory (required)
  CompressionMode mode = CompressionMode::cam_composite;
  ProtocolConfig protocol;
  std::string class_order = "shuffled";  // "shuffled" (by seed) or "identity"
  TrainConfig train;
  RunOptions run;

  // Canonical key=value view of every field. Regenerated from the parsed
  // values, so formatting is stable regardless of how the file spelled them.
  std::map<std::string, std::string> to_kv() const;

  // Digest over the canonical view minus `out`: two runs writing to
  // different directories from otherwise identical configs share it.
  uint64_t digest() const {
    std::string blob;
    for (const auto& [k, v] : to_kv()) {
      if (k == "out") continue;
      blob += k;
      blob += '=';
      blob += v;
      blob += '\n';
    }
    return fnv1a64(blob.data(), blob.size());
  }
};

namespace harness_detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::string fmt_float(float v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

[[noreturn]] inline void bad_value(const std::string& key, const std::string& got,
                                   const std::string& want) {
  throw ConfigError("config: key '" + key + "': expected " + want + ", got '" + got + "'");
}

inline long long parse_int(const std::string& key, const std::string& v, long long lo,
                           long long hi) {
  size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    bad_value(key, v, "an integer");
  }
  if (used != v.size()) bad_value(key, v, "an integer");
  if (out < lo || out > hi)
    bad_value(key, v, "an integer in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return out;
}

inline uint64_t parse_u64(const std::string& key, const std::string& v) {
  size_t used = 0;
  uint64_t out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    bad_value(key, v, "an unsigned integer");
  }
  if (used != v.size() || v[0] == '-') bad_value(key, v, "an unsigned integer");
  return out;
}

inline float parse_float(const std::string& key, const std::string& v) {
  size_t used = 0;
  float out = 0;
  try {
    out = std::stof(v, &used);
  } catch (const std::exception&) {
    bad_value(key, v, "a number");
  }
  if (used != v.size()) bad_value(key, v, "a number");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "0" || v == "false") return false;
  if (v == "1" || v == "true") return true;
  bad_value(key, v, "0/1/false/true");
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(static_cast<int>(parse_int(key, trim(item), 1, 1 << 30)));
  return out;
}

}  // namespace harness_detail

// Parses `key = value` lines; '#' starts a comment, blank lines skipped.
// Duplicate keys are rejected so config mistakes fail loudly.
inline std::map<std::string, std::string> parse_kv_text(const std::string& text) {
  using harness_detail::trim;
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config: line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, val).second)
      throw ConfigError("config: duplicate key '" + key + "'");
  }
  return kv;
}

inline ExperimentConfig experiment_config_from_kv(const std::map<std::string, std::string>& kv) {
  using namespace harness_detail;
  ExperimentConfig cfg;
  for (const auto& [key, v] : kv) {
    if (key == "dataset") cfg.dataset = v;
    else if (key == "out") cfg.out = v;
    else if (key == "mode") cfg.mode = mode_from_name(v);
    else if (key == "protocol") {
      if (v == "lfs") cfg.protocol.kind = ProtocolKind::LFS;
      else if (v == "lfh") cfg.protocol.kind = ProtocolKind::LFH;
      else bad_value(key, v, "lfs or lfh");
    } else if (key == "base_classes")
      cfg.protocol.base_classes = static_cast<int>(parse_int(key, v, 1, 1 << 20));
    else if (key == "step_classes")
      cfg.protocol.step_classes = static_cast<int>(parse_int(key, v, 1, 1 << 20));
    else if (key == "budget_mode") {
      if (v == "fixed_total") cfg.protocol.budget_mode = BudgetMode::fixed_total;
      else if (v == "per_class_growing") cfg.protocol.budget_mode = BudgetMode::per_class_growing;
      else bad_value(key, v, "fixed_total or per_class_growing");
    } else if (key == "budget_images")
      cfg.protocol.budget_images = static_cast<int>(parse_int(key, v, 0, 1 << 30));
    else if (key == "raw_reference_h")
      cfg.protocol.raw_reference_h = static_cast<int>(parse_int(key, v, 1, 65535));
    else if (key == "raw_reference_w")
      cfg.protocol.raw_reference_w = static_cast<int>(parse_int(key, v, 1, 65535));
    else if (key == "class_order") {
      if (v != "shuffled" && v != "identity") bad_value(key, v, "shuffled or identity");
      cfg.class_order = v;
    } else if (key == "seed")
      cfg.train.seed = parse_u64(key, v);
    else if (key == "initial_epochs")
      cfg.train.initial_epochs = static_cast<int>(parse_int(key, v, 1, 1 << 20));
    else if (key == "incremental_epochs")
      cfg.train.incremental_epochs = static_cast<int>(parse_int(key, v, 1, 1 << 20));
    else if (key == "batch_size")
      cfg.train.batch_size = static_cast<int>(parse_int(key, v, 1, 1 << 20));
    else if (key == "base_lr")
      cfg.train.base_lr = parse_float(key, v);
    else if (key == "momentum")
      cfg.train.momentum = parse_float(key, v);
    else if (key == "lr_decay_epochs")
      cfg.train.lr_decay_epochs = parse_int_list(key, v);
    else if (key == "lr_decay_factor")
      cfg.train.lr_decay_factor = parse_float(key, v);
    else if (key == "distill_weight")
      cfg.train.distill_weight = parse_float(key, v);
    else if (key == "distill_temp")
      cfg.train.distill_temp = parse_float(key, v);
    else if (key == "augment")
      cfg.train.augment = parse_bool(key, v);
    else if (key == "codec_lambda")
      cfg.run.codec_lambda = parse_float(key, v);
    else if (key == "codec_initial_epochs")
      cfg.run.codec_initial_epochs = static_cast<int>(parse_int(key, v, 1, 1 << 20));
    else if (key == "codec_finetune_epochs")
      cfg.run.codec_finetune_epochs = static_cast<int>(parse_int(key, v, 0, 1 << 20));
    else if (key == "candidates_per_class")
      cfg.run.candidates_per_class = static_cast<int>(parse_int(key, v, 1, 1 << 30));
    else if (key == "cam_threshold")
      cfg.run.cam_threshold = parse_float(key, v);
    else
      throw ConfigError("config: unknown key '" + key + "'");
  }
  if (cfg.dataset.empty()) throw ConfigError("config: key 'dataset' is required");
  if (cfg.out.empty()) throw ConfigError("config: key 'out' is required");
  if (cfg.run.codec_lambda <= 0)
    harness_detail::bad_value("codec_lambda", harness_detail::fmt_float(cfg.run.codec_lambda),
                              "a positive number");
  if (!(cfg.run.cam_threshold > 0.0f && cfg.run.cam_threshold < 1.0f))
    harness_detail::bad_value("cam_threshold", harness_detail::fmt_float(cfg.run.cam_threshold),
                              "a number in (0, 1)");
  cfg.train.validate();
  return cfg;
}

inline std::map<std::string, std::string> ExperimentConfig::to_kv() const {
  using harness_detail::fmt_float;
  std::map<std::string, std::string> kv;
  kv["dataset"] = dataset;
  kv["out"] = out;
  kv["mode"] = mode_name(mode);
  kv["protocol"] = protocol.kind == ProtocolKind::LFS ? "lfs" : "lfh";
  kv["base_classes"] = std::to_string(protocol.base_classes);
  kv["step_classes"] = std::to_string(protocol.step_classes);
  kv["budget_mode"] =
      protocol.budget_mode == BudgetMode::fixed_total ? "fixed_total" : "per_class_growing";
  kv["budget_images"] = std::to_string(protocol.budget_images);
  kv["raw_reference_h"] = std::to_string(protocol.raw_reference_h);
  kv["raw_reference_w"] = std::to_string(protocol.raw_reference_w);
  kv["class_order"] = class_order;
  kv["seed"] = std::to_string(train.seed);
  kv["initial_epochs"] = std::to_string(train.initial_epochs);
  kv["incremental_epochs"] = std::to_string(train.incremental_epochs);
  kv["batch_size"] = std::to_string(train.batch_size);
  kv["base_lr"] = fmt_float(train.base_lr);
  kv["momentum"] = fmt_float(train.momentum);
  {
    std::string joined;
    for (size_t i = 0; i < train.lr_decay_epochs.size(); ++i) {
      if (i) joined += ',';
      joined += std::to_string(train.lr_decay_epochs[i]);
    }
    kv["lr_decay_epochs"] = joined;
  }
  kv["lr_decay_factor"] = fmt_float(train.lr_decay_factor);
  kv["distill_weight"] = fmt_float(train.distill_weight);
  kv["distill_temp"] = fmt_float(train.distill_temp);
  kv["augment"] = train.augment ? "1" : "0";
  kv["codec_lambda"] = fmt_float(run.codec_lambda);
  kv["codec_initial_epochs"] = std::to_string(run.codec_initial_epochs);
  kv["codec_finetune_epochs"] = std::to_string(run.codec_finetune_epochs);
  kv["candidates_per_class"] = std::to_string(run.candidates_per_class);
  kv["cam_threshold"] = fmt_float(run.cam_threshold);
  return kv;
}

// File + override merge; override values win over file values.
inline ExperimentConfig load_experiment_config(
    const std::string& path, const std::map<std::string, std::string>& overrides = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  std::map<std::string, std::string> kv = parse_kv_text(buf.str());
  for (const auto& [k, v] : overrides) kv[k] = v;
  return experiment_config_from_kv(kv);
}

// ---------------------------------------------------------------------------
// Reports

struct PhaseRow {
  PhaseResult result;
  double seconds = 0.0;  // wall clock spent on this phase
};

struct RunReport {
  std::vector<PhaseRow> rows;
  double avg = 0.0;
  double last = 0.0;
  std::string mode;
  uint64_t config_digest = 0;
  double total_seconds = 0.0;
};

namespace harness_detail {

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace harness_detail

inline std::string render_csv(const RunReport& report) {
  std::string out =
      "phase,classes_seen,top1,exemplar_count,mean_record_bpp,buffer_bits_used,buffer_bits_total\n";
  for (const PhaseRow& row : report.rows) {
    const PhaseResult& r = row.result;
    out += std::to_string(r.phase) + ',' + std::to_string(r.classes_seen) + ',' +
           harness_detail::fmt("%.6f", r.top1) + ',' + std::to_string(r.exemplar_count) + ',' +
           harness_detail::fmt("%.6f", r.mean_record_bpp) + ',' +
           std::to_string(r.buffer_bits_used) + ',' + std::to_string(r.buffer_bits_total) + '\n';
  }
  return out;
}

inline std::string render_report_text(const RunReport& report) {
  std::ostringstream os;
  os << "mode: " << report.mode << "\n";
  char digest[32];
  std::snprintf(digest, sizeof digest, "%016llx",
                static_cast<unsigned long long>(report.config_digest));
  os << "config digest: " << digest << "\n\n";
  os << "phase  classes  top1     exemplars  mean bpp   bits used / budget        seconds\n";
  for (const PhaseRow& row : report.rows) {
    const PhaseResult& r = row.result;
    char line[192];
    std::snprintf(line, sizeof line, "%5d  %7d  %.4f  %9zu  %9.4f  %12llu / %-12llu %8.1f\n",
                  r.phase, r.classes_seen, r.top1, r.exemplar_count, r.mean_record_bpp,
                  static_cast<unsigned long long>(r.buffer_bits_used),
                  static_cast<unsigned long long>(r.buffer_bits_total), row.seconds);
    os << line;
  }
  os << "\navg top1:  " << harness_detail::fmt("%.6f", report.avg) << "\n";
  os << "last top1: " << harness_detail::fmt("%.6f", report.last) << "\n";
  os << "wall clock: " << harness_detail::fmt("%.1f", report.total_seconds) << "s\n";
  return os.str();
}

inline std::string render_summary_json(const RunReport& report) {
  nlohmann::json j;
  j["avg"] = report.avg;
  j["last"] = report.last;
  j["mode"] = report.mode;
  j["phases"] = report.rows.size();
  char digest[32];
  std::snprintf(digest, sizeof digest, "%016llx",
                static_cast<unsigned long long>(report.config_digest));
  j["config_digest"] = digest;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Plots: self-contained SVG line charts. Every point carries a data-y
// attribute formatted exactly like the CSV, so plot and CSV stay diffable.

inline std::string render_line_chart(const std::string& title, const std::string& ylabel,
                                     const std::vector<std::pair<std::string, std::vector<double>>>& series,
                                     double y_max_hint = 0.0) {
  if (series.empty() || series[0].second.empty())
    throw DataError("plot: need at least one series with one point");
  size_t phases = 0;
  double y_max = y_max_hint;
  for (const auto& [name, ys] : series) {
    phases = std::max(phases, ys.size());
    for (double y : ys) y_max = std::max(y_max, y);
  }
  if (y_max <= 0) y_max = 1.0;

  const double w = 640, h = 400, ml = 64, mr = 24, mt = 40, mb = 44;
  const double pw = w - ml - mr, ph = h - mt - mb;
  auto x_of = [&](size_t i) {
    return phases == 1 ? ml + pw / 2 : ml + pw * static_cast<double>(i) / (phases - 1);
  };
  auto y_of = [&](double v) { return mt + ph * (1.0 - v / y_max); };

  static const char* kColors[] = {"#1f6f8b", "#c0392b", "#27ae60", "#8e44ad", "#d68910"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"15\">"
     << title << "</text>\n";

  // Axes with four horizontal gridlines.
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
     << "\" stroke=\"#333\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
     << mt + ph << "\" stroke=\"#333\"/>\n";
  for (int g = 0; g <= 4; ++g) {
    double v = y_max * g / 4.0;
    double y = y_of(v);
    if (g > 0)
      os << "<line x1=\"" << ml << "\" y1=\"" << y << "\" x2=\"" << ml + pw << "\" y2=\"" << y
         << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << y + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
       << harness_detail::fmt("%.2f", v) << "</text>\n";
  }
  for (size_t i = 0; i < phases; ++i)
    os << "<text x=\"" << x_of(i) << "\" y=\"" << mt + ph + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << i
       << "</text>\n";
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << h - 8
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">phase</text>\n";
  os << "<text x=\"16\" y=\"" << mt + ph / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 "
     << mt + ph / 2 << ")\">" << ylabel << "</text>\n";

  for (size_t s = 0; s < series.size(); ++s) {
    const auto& [name, ys] = series[s];
    const char* color = kColors[s % 5];
    if (ys.size() > 1) {
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (size_t i = 0; i < ys.size(); ++i)
        os << (i ? " " : "") << x_of(i) << "," << y_of(ys[i]);
      os << "\"/>\n";
    }
    for (size_t i = 0; i < ys.size(); ++i)
      os << "<circle cx=\"" << x_of(i) << "\" cy=\"" << y_of(ys[i]) << "\" r=\"3.5\" fill=\""
         << color << "\" data-series=\"" << name << "\" data-x=\"" << i << "\" data-y=\""
         << harness_detail::fmt("%.6f", ys[i]) << "\"/>\n";
    // Legend entry.
    double lx = ml + pw - 150, ly = mt + 10 + 18 * static_cast<double>(s);
    os << "<rect x=\"" << lx << "\" y=\"" << ly - 9 << "\" width=\"12\" height=\"12\" fill=\""
       << color << "\"/>\n";
    os << "<text x=\"" << lx + 18 << "\" y=\"" << ly + 2
       << "\" font-family=\"sans-serif\" font-size=\"12\">" << name << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

namespace harness_detail {

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace harness_detail

// Accuracy and bpp curves; several reports overlay as separate series.
inline void emit_plots(const std::vector<std::pair<std::string, const RunReport*>>& reports,
                       const std::string& out_dir) {
  if (reports.empty() || !reports[0].second || reports[0].second->rows.empty())
    throw DataError("emit_plots: need at least one phase");
  std::vector<std::pair<std::string, std::vector<double>>> acc, bpp;
  for (const auto& [name, rep] : reports) {
    std::vector<double> a, b;
    for (const PhaseRow& row : rep->rows) {
      a.push_back(row.result.top1);
      b.push_back(row.result.mean_record_bpp);
    }
    acc.emplace_back(name, std::move(a));
    bpp.emplace_back(name, std::move(b));
  }
  namespace fs = std::filesystem;
  fs::path dir(out_dir);
  harness_detail::write_text_file(dir / "accuracy_vs_phase.svg",
                                  render_line_chart("top-1 accuracy by phase", "top-1", acc, 1.0));
  harness_detail::write_text_file(dir / "bpp_vs_phase.svg",
                                  render_line_chart("stored record bpp by phase", "bits/px", bpp));
}

inline void emit_plots(const RunReport& report, const std::string& out_dir) {
  emit_plots({{report.mode, &report}}, out_dir);
}

// ---------------------------------------------------------------------------
// Orchestration

inline RunReport run_experiment(const ExperimentConfig& cfg,
                                const std::function<void(const std::string&)>& log = {}) {
  namespace fs = std::filesystem;
  if (!fs::exists(cfg.dataset)) throw IoError("dataset root not found: " + cfg.dataset);
  fs::create_directories(cfg.out);

  Dataset ds = load_dataset(cfg.dataset);
  ClassOrder order;
  if (cfg.class_order == "shuffled") {
    order = shuffle_classes(ds.num_classes(), cfg.train.seed);
  } else {
    order.permutation.resize(static_cast<size_t>(ds.num_classes()));
    for (int i = 0; i < ds.num_classes(); ++i) order.permutation[static_cast<size_t>(i)] = i;
  }
  TaskSequence seq = build_task_sequence(ds, order, cfg.protocol);

  RunReport report;
  report.mode = mode_name(cfg.mode);
  report.config_digest = cfg.digest();

  using clock = std::chrono::steady_clock;
  auto run_start = clock::now();
  auto phase_start = run_start;

  RunOptions opts = cfg.run;
  opts.log = log;
  opts.on_phase = [&](const PhaseResult& pr) {
    auto now = clock::now();
    PhaseRow row;
    row.result = pr;
    row.seconds = std::chrono::duration<double>(now - phase_start).count();
    phase_start = now;
    report.rows.push_back(row);
    if (log) {
      char line[160];
      std::snprintf(line, sizeof line,
                    "phase %d done: top1 %.4f, %zu exemplars, %llu/%llu bits, %.1fs", pr.phase,
                    pr.top1, pr.exemplar_count, static_cast<unsigned long long>(pr.buffer_bits_used),
                    static_cast<unsigned long long>(pr.buffer_bits_total), row.seconds);
      log(line);
    }
  };

  RunArtifacts art = run_incremental(seq, cfg.protocol, cfg.train, cfg.mode, opts);
  report.total_seconds = std::chrono::duration<double>(clock::now() - run_start).count();
  auto [avg, last] = summarize(art.results);
  report.avg = avg;
  report.last = last;

  // Artifacts: exemplar store (inspectable later) and the codec when one
  // was trained, then the three report files and both plots.
  fs::path out(cfg.out);
  save_store(art.store, (out / "store").string());
  if (art.codec) save_codec(*art.codec, (out / "codec.czm").string());
  harness_detail::write_text_file(out / "report.txt", render_report_text(report));
  harness_detail::write_text_file(out / "metrics.csv", render_csv(report));
  harness_detail::write_text_file(out / "summary.json", render_summary_json(report));
  emit_plots(report, cfg.out);
  return report;
}

}  // namespace czc
