#include "hiam/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hiam/error.hpp"

namespace hiam {

namespace {

void check_same_shape(const Matrix& pred, const Matrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
    throw Error(ErrorKind::Dimension, "prediction is " + std::to_string(pred.rows()) + "x" +
                                          std::to_string(pred.cols()) + ", truth is " +
                                          std::to_string(truth.rows()) + "x" +
                                          std::to_string(truth.cols()));
  }
}

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream s;
  s.precision(17);
  s << *v;
  return s.str();
}

std::optional<double> mean_of(const std::vector<HorizonMetrics>& hs,
                              std::optional<double> HorizonMetrics::*field) {
  double sum = 0.0;
  int count = 0;
  for (const auto& h : hs) {
    if (const auto& v = h.*field) {
      sum += *v;
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return sum / count;
}

}  // namespace

std::optional<double> network_mape(const Matrix& pred, const Matrix& truth) {
  MapeAccumulator acc;
  acc.add(pred, truth);
  return acc.value();
}

void MapeAccumulator::add(const Matrix& pred, const Matrix& truth) {
  check_same_shape(pred, truth);
  error_ += (pred - truth).cwiseAbs().sum();
  total_ += truth.cwiseAbs().sum();
}

std::optional<double> MapeAccumulator::value() const {
  if (total_ == 0.0) return std::nullopt;
  return error_ / total_;
}

GroupMape split_group_mape(const Matrix& pred, const Matrix& truth, const CompressionMaps& maps) {
  check_same_shape(pred, truth);
  const Eigen::Index k = maps.k();
  if (truth.cols() != k) {
    throw Error(ErrorKind::Dimension, "matrix has " + std::to_string(truth.cols()) +
                                          " columns, maps have K=" + std::to_string(k));
  }
  GroupMape g;
  if (k > 1) g.topk = network_mape(pred.leftCols(k - 1), truth.leftCols(k - 1));
  g.remainder = network_mape(pred.rightCols(1), truth.rightCols(1));
  return g;
}

HaBaseline::HaBaseline(std::span<const IntervalTruth> train_truth, int intervals_per_day)
    : per_day_(intervals_per_day) {
  if (train_truth.empty()) throw Error(ErrorKind::InsufficientData, "no training intervals");
  struct Sum {
    Matrix od, dom;
    int count = 0;
    void add(const IntervalTruth& t) {
      if (count == 0) {
        od = t.od;
        dom = t.dom;
      } else {
        od += t.od;
        dom += t.dom;
      }
      ++count;
    }
    SampleTarget mean() const { return {od / count, dom / count}; }
  };
  std::map<std::pair<int, int>, Sum> slot;
  std::map<int, Sum> interval;
  Sum all;
  for (const auto& t : train_truth) {
    const int dow = day_of_week(t.interval, per_day_);
    const int iod = interval_of_day(t.interval, per_day_);
    slot[{dow, iod}].add(t);
    interval[iod].add(t);
    all.add(t);
  }
  for (const auto& [key, s] : slot) by_slot_.emplace(key, s.mean());
  for (const auto& [key, s] : interval) by_interval_.emplace(key, s.mean());
  global_ = all.mean();
}

SampleTarget HaBaseline::predict(std::int64_t interval) const {
  const int dow = day_of_week(interval, per_day_);
  const int iod = interval_of_day(interval, per_day_);
  if (auto it = by_slot_.find({dow, iod}); it != by_slot_.end()) return it->second;
  if (auto it = by_interval_.find(iod); it != by_interval_.end()) return it->second;
  return global_;
}

namespace {

// 2^-30 passengers. Fine enough to leave any real prediction unchanged for
// reporting, coarse enough to absorb the rounding of a normalize/de-normalize
// round trip so integer counts come back exactly.
constexpr double kCountGrid = 1073741824.0;

Matrix snap_counts(const Matrix& counts) {
  return counts.unaryExpr(
      [](double v) { return std::max(0.0, std::nearbyint(v * kCountGrid) / kCountGrid); });
}

}  // namespace

SampleTarget to_counts(const SampleTarget& normalized, const NormStats& stats) {
  return {snap_counts(stats.denormalize_od(normalized.od)),
          snap_counts(stats.denormalize_do(normalized.dom))};
}

std::vector<SampleTarget> predict_counts(const HiamModel& model, const NormStats& stats,
                                         const SnapshotSample& raw) {
  std::vector<SampleTarget> out = model.predict(normalize(raw, stats));
  for (auto& t : out) t = to_counts(t, stats);
  return out;
}

std::optional<double> MethodReport::mean_od() const {
  return mean_of(horizons, &HorizonMetrics::od);
}

std::optional<double> MethodReport::mean_do() const {
  return mean_of(horizons, &HorizonMetrics::dom);
}

MethodReport score(const std::string& name, std::span<const std::vector<SampleTarget>> preds,
                   std::span<const SnapshotSample> truth, const CompressionMaps& maps) {
  if (preds.size() != truth.size()) {
    throw Error(ErrorKind::Dimension, "prediction count differs from sample count");
  }
  const std::size_t m = truth.empty() ? 0 : truth.front().targets.size();
  struct Acc {
    MapeAccumulator all, topk, rest;
    void add(const Matrix& p, const Matrix& t) {
      all.add(p, t);
      const Eigen::Index k = t.cols();
      if (k > 1) topk.add(p.leftCols(k - 1), t.leftCols(k - 1));
      rest.add(p.rightCols(1), t.rightCols(1));
    }
  };
  std::vector<Acc> od(m), dom(m);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (preds[i].size() != m || truth[i].targets.size() != m) {
      throw Error(ErrorKind::Dimension, "horizon count mismatch in sample " + std::to_string(i));
    }
    for (std::size_t h = 0; h < m; ++h) {
      if (truth[i].targets[h].od.cols() != maps.k()) {
        throw Error(ErrorKind::Dimension, "sample width differs from maps K");
      }
      od[h].add(preds[i][h].od, truth[i].targets[h].od);
      dom[h].add(preds[i][h].dom, truth[i].targets[h].dom);
    }
  }
  MethodReport r;
  r.name = name;
  for (std::size_t h = 0; h < m; ++h) {
    HorizonMetrics hm;
    hm.horizon = static_cast<int>(h) + 1;
    hm.od = od[h].all.value();
    hm.dom = dom[h].all.value();
    hm.od_groups = {od[h].topk.value(), od[h].rest.value()};
    hm.do_groups = {dom[h].topk.value(), dom[h].rest.value()};
    r.horizons.push_back(hm);
  }
  return r;
}

namespace {

nlohmann::json method_json(const MethodReport& r) {
  nlohmann::json hs = nlohmann::json::array();
  for (const auto& h : r.horizons) {
    hs.push_back({{"horizon", h.horizon},
                  {"od_mape", opt(h.od)},
                  {"do_mape", opt(h.dom)},
                  {"od_topk_mape", opt(h.od_groups.topk)},
                  {"od_remainder_mape", opt(h.od_groups.remainder)},
                  {"do_topk_mape", opt(h.do_groups.topk)},
                  {"do_remainder_mape", opt(h.do_groups.remainder)}});
  }
  return {{"name", r.name},
          {"horizons", hs},
          {"mean_od_mape", opt(r.mean_od())},
          {"mean_do_mape", opt(r.mean_do())}};
}

}  // namespace

nlohmann::json EvaluationReport::to_json() const {
  return {{"samples", samples}, {"model", method_json(model)}, {"ha", method_json(ha)}};
}

EvaluationReport evaluate(const HiamModel& model, const NormStats& stats,
                          std::span<const SnapshotSample> test_raw, const HaBaseline& ha,
                          const CompressionMaps& maps) {
  if (test_raw.empty()) throw Error(ErrorKind::InsufficientData, "test split is empty");
  const ModelConfig& c = model.config();
  if (c.stations != maps.stations() || c.k != maps.k()) {
    throw Error(ErrorKind::Dimension, "checkpoint is N=" + std::to_string(c.stations) +
                                          " K=" + std::to_string(c.k) + ", dataset is N=" +
                                          std::to_string(maps.stations()) +
                                          " K=" + std::to_string(maps.k()));
  }
  std::vector<std::vector<SampleTarget>> model_preds, ha_preds;
  model_preds.reserve(test_raw.size());
  ha_preds.reserve(test_raw.size());
  for (const auto& s : test_raw) {
    model_preds.push_back(predict_counts(model, stats, s));
    std::vector<SampleTarget> h;
    for (std::size_t i = 0; i < s.targets.size(); ++i) {
      h.push_back(ha.predict(s.reference + 1 + static_cast<std::int64_t>(i)));
    }
    ha_preds.push_back(std::move(h));
  }
  EvaluationReport report;
  report.samples = test_raw.size();
  report.model = score("hiam", model_preds, test_raw, maps);
  report.ha = score("ha", ha_preds, test_raw, maps);
  return report;
}

void write_report_json(const EvaluationReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << report.to_json().dump(2) << '\n';
}

void write_report_csv(const EvaluationReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "method,horizon,od_mape,do_mape,od_topk,od_remainder,do_topk,do_remainder\n";
  for (const MethodReport* r : {&report.model, &report.ha}) {
    for (const auto& h : r->horizons) {
      out << r->name << ',' << h.horizon << ',' << fmt_opt(h.od) << ',' << fmt_opt(h.dom) << ','
          << fmt_opt(h.od_groups.topk) << ',' << fmt_opt(h.od_groups.remainder) << ','
          << fmt_opt(h.do_groups.topk) << ',' << fmt_opt(h.do_groups.remainder) << '\n';
    }
  }
}

std::vector<InputVariant> input_variants() {
  return {{"IOD", false, false, false},
          {"IOD+U", true, false, false},
          {"IOD+U(short)", false, true, false},
          {"IOD+U(long)", false, false, true},
          {"IOD+U(short+long)", false, true, true}};
}

void write_ablation_csv(std::span<const AblationRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "inputs,interaction,horizon,od_mape,do_mape\n";
  for (const auto& row : rows) {
    for (const auto& h : row.metrics.horizons) {
      out << row.inputs << ',' << to_string(row.interaction) << ',' << h.horizon << ','
          << fmt_opt(h.od) << ',' << fmt_opt(h.dom) << '\n';
    }
    out << row.inputs << ',' << to_string(row.interaction) << ",mean,"
        << fmt_opt(row.metrics.mean_od()) << ',' << fmt_opt(row.metrics.mean_do()) << '\n';
  }
}

std::string render_ablation_markdown(std::span<const AblationRow> rows) {
  std::vector<std::string> inputs;
  std::vector<InteractionMode> modes;
  for (const auto& r : rows) {
    if (std::find(inputs.begin(), inputs.end(), r.inputs) == inputs.end()) inputs.push_back(r.inputs);
    if (std::find(modes.begin(), modes.end(), r.interaction) == modes.end()) {
      modes.push_back(r.interaction);
    }
  }
  auto cell = [&](const std::string& in, InteractionMode mode, bool od) -> std::string {
    for (const auto& r : rows) {
      if (r.inputs == in && r.interaction == mode) {
        const auto v = od ? r.metrics.mean_od() : r.metrics.mean_do();
        if (!v) return "n/a";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f%%", *v * 100.0);
        return buf;
      }
    }
    return "";
  };
  std::ostringstream s;
  for (const bool od : {true, false}) {
    s << "### Mean " << (od ? "OD" : "DO") << " MAPE\n\n| interaction |";
    for (const auto& in : inputs) s << ' ' << in << " |";
    s << "\n|---|";
    for (std::size_t i = 0; i < inputs.size(); ++i) s << "---|";
    s << '\n';
    for (const auto mode : modes) {
      s << "| " << to_string(mode) << " |";
      for (const auto& in : inputs) s << ' ' << cell(in, mode, od) << " |";
      s << '\n';
    }
    s << '\n';
  }
  return s.str();
}

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 360;
constexpr int kMargin = 50;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

void svg_open(std::ostream& out, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << title << "</text>\n"
      << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin << "\" x2=\""
      << kWidth - kMargin / 2 << "\" y2=\"" << kHeight - kMargin << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin << "\" y2=\""
      << kHeight - kMargin << "\" stroke=\"black\"/>\n";
}

}  // namespace

void write_mape_bars_svg(const EvaluationReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  struct Bar {
    std::string label;
    double value;
    const char* color;
  };
  std::vector<Bar> bars;
  const std::size_t m = report.model.horizons.size();
  for (std::size_t h = 0; h < m; ++h) {
    const auto& mh = report.model.horizons[h];
    const auto& hh = report.ha.horizons[h];
    const std::string t = "h" + std::to_string(mh.horizon);
    bars.push_back({t + " OD", mh.od.value_or(0.0), "#1f77b4"});
    bars.push_back({t + " OD HA", hh.od.value_or(0.0), "#aec7e8"});
    bars.push_back({t + " DO", mh.dom.value_or(0.0), "#d62728"});
    bars.push_back({t + " DO HA", hh.dom.value_or(0.0), "#ff9896"});
  }
  double top = 1e-12;
  for (const auto& b : bars) top = std::max(top, b.value);
  svg_open(out, "Network MAPE per horizon (model vs HA)");
  const double plot_w = kWidth - 1.5 * kMargin;
  const double plot_h = kHeight - 2.0 * kMargin;
  const double slot = bars.empty() ? plot_w : plot_w / static_cast<double>(bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double h = plot_h * bars[i].value / top;
    const double x = kMargin + slot * static_cast<double>(i) + slot * 0.1;
    const double y = kHeight - kMargin - h;
    out << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(slot * 0.8)
        << "\" height=\"" << num(h) << "\" fill=\"" << bars[i].color << "\"/>\n"
        << "<text x=\"" << num(x + slot * 0.4) << "\" y=\"" << num(y - 3)
        << "\" text-anchor=\"middle\" font-size=\"8\">" << num(bars[i].value * 100.0)
        << "</text>\n"
        << "<text transform=\"translate(" << num(x + slot * 0.4) << ","
        << kHeight - kMargin + 10 << ") rotate(45)\" font-size=\"8\">" << bars[i].label
        << "</text>\n";
  }
  out << "<text x=\"12\" y=\"" << kHeight / 2 << "\" transform=\"rotate(-90 12 " << kHeight / 2
      << ")\" text-anchor=\"middle\">MAPE (%), max " << num(top * 100.0) << "</text>\n</svg>\n";
}

void write_loss_curve_svg(std::span<const HistoryRow> history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  svg_open(out, "Training loss (normalized MAE)");
  double top = 1e-12;
  for (const auto& r : history) top = std::max(top, r.train_loss);
  const double plot_w = kWidth - 1.5 * kMargin;
  const double plot_h = kHeight - 2.0 * kMargin;
  const double n = std::max<double>(1.0, static_cast<double>(history.size()) - 1.0);
  out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1\" points=\"";
  for (std::size_t i = 0; i < history.size(); ++i) {
    const double x = kMargin + plot_w * static_cast<double>(i) / n;
    const double y = kHeight - kMargin - plot_h * history[i].train_loss / top;
    out << num(x) << ',' << num(y) << ' ';
  }
  out << "\"/>\n"
      << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 15
      << "\" text-anchor=\"middle\">step (" << history.size() << " total)</text>\n"
      << "<text x=\"12\" y=\"" << kHeight / 2 << "\" transform=\"rotate(-90 12 " << kHeight / 2
      << ")\" text-anchor=\"middle\">loss, max " << num(top) << "</text>\n</svg>\n";
}

}  // namespace hiam
