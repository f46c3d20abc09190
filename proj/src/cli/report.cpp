#include "dcebad/cli/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace dcebad::cli {

using nlohmann::ordered_json;

std::string fixed(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, value);
  return buf;
}

namespace {

std::string sci(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", value);
  return buf;
}

ordered_json confusion_json(const train::ConfusionMatrix& cm) {
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    ordered_json row = ordered_json::array();
    for (std::size_t j = 0; j < cm.classes(); ++j) row.push_back(cm.at(i, j));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

std::string align_columns(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    if (width.size() < row.size()) width.resize(row.size(), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream os;
  for (const auto& row : rows) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      const std::string pad(width[c] - row[c].size(), ' ');
      if (c > 0) line += "  ";
      line += c == 0 ? row[c] + pad : pad + row[c];
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    os << line << '\n';
  }
  return os.str();
}

ordered_json metrics_to_json(const train::ConfusionMatrix& cm,
                             const std::vector<std::string>& labels) {
  const train::MetricsReport r = train::compute_metrics(cm);
  ordered_json j;
  j["averaging"] = "macro";
  j["examples"] = cm.total();
  j["accuracy"] = r.accuracy;
  j["precision"] = r.macro_precision;
  j["recall"] = r.macro_recall;
  j["f1"] = r.macro_f1;
  ordered_json per_class = ordered_json::array();
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& s = r.per_class[k];
    per_class.push_back({{"label", labels.at(k)},
                         {"precision", s.precision},
                         {"recall", s.recall},
                         {"f1", s.f1},
                         {"support", s.support}});
  }
  j["per_class"] = per_class;
  ordered_json degenerate = ordered_json::array();
  for (std::size_t k : r.degenerate_classes) degenerate.push_back(labels.at(k));
  j["zero_division_classes"] = degenerate;
  j["confusion"] = {{"rows", "true label"}, {"columns", "predicted label"},
                    {"labels", labels}, {"counts", confusion_json(cm)}};
  return j;
}

std::string format_metrics(const train::ConfusionMatrix& cm, const std::vector<std::string>& labels) {
  const train::MetricsReport r = train::compute_metrics(cm);
  std::ostringstream os;
  os << "examples " << cm.total() << "  accuracy " << fixed(r.accuracy)
     << "  macro precision " << fixed(r.macro_precision) << "  macro recall "
     << fixed(r.macro_recall) << "  macro F1 " << fixed(r.macro_f1) << '\n';
  std::vector<std::vector<std::string>> rows = {{"class", "precision", "recall", "f1", "support"}};
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& s = r.per_class[k];
    rows.push_back({labels.at(k), fixed(s.precision), fixed(s.recall), fixed(s.f1),
                    std::to_string(s.support)});
  }
  os << align_columns(rows);
  if (!r.degenerate_classes.empty()) {
    os << "0/0 scored as 0 for:";
    for (std::size_t k : r.degenerate_classes) os << ' ' << labels.at(k);
    os << '\n';
  }
  return os.str();
}

ordered_json history_to_json(const train::TrainHistory& h, double wall_seconds) {
  ordered_json j;
  ordered_json points = ordered_json::array();
  for (const auto& p : h.points) {
    points.push_back({{"batch", p.batch},
                      {"train_loss", p.train_loss ? ordered_json(*p.train_loss) : ordered_json(nullptr)},
                      {"val_loss", p.val_loss},
                      {"val_accuracy", p.val_accuracy}});
  }
  j["eval_points"] = points;
  j["best_val_accuracy"] = h.best_val_accuracy;
  j["best_batch"] = h.best_batch;
  j["batches_trained"] = h.batches_trained;
  j["stop_reason"] = h.stop_reason == train::StopReason::early_stop ? "early_stop" : "epochs_done";
  j["batch_losses"] = h.batch_losses;
  j["wall_time_seconds"] = wall_seconds;
  return j;
}

ordered_json benchmark_to_json(const std::vector<BenchmarkRow>& rows,
                               const std::vector<std::string>& labels) {
  ordered_json j;
  j["averaging"] = "macro";
  j["labels"] = labels;
  ordered_json out = ordered_json::array();
  for (const auto& row : rows) {
    const train::MetricsReport r = train::compute_metrics(row.confusion);
    ordered_json f1 = ordered_json::array();
    for (const auto& s : r.per_class) f1.push_back(s.f1);
    out.push_back({{"variant", row.variant},
                   {"accuracy", r.accuracy},
                   {"precision", r.macro_precision},
                   {"recall", r.macro_recall},
                   {"f1", r.macro_f1},
                   {"per_class_f1", f1},
                   {"parameters", row.parameters},
                   {"batches_trained", row.batches_trained},
                   {"best_batch", row.best_batch},
                   {"config_hash", row.config_hash},
                   {"wall_time_seconds", row.wall_seconds}});
  }
  j["variants"] = out;
  return j;
}

std::string format_benchmark(const std::vector<BenchmarkRow>& rows,
                             const std::vector<std::string>& labels) {
  std::vector<std::vector<std::string>> table = {
      {"model", "accuracy", "precision", "f1", "params", "seconds"}};
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> head = {"model"};
  head.insert(head.end(), labels.begin(), labels.end());
  grid.push_back(head);
  for (const auto& row : rows) {
    const train::MetricsReport r = train::compute_metrics(row.confusion);
    table.push_back({row.variant, fixed(r.accuracy), fixed(r.macro_precision), fixed(r.macro_f1),
                     std::to_string(row.parameters), fixed(row.wall_seconds, 1)});
    std::vector<std::string> line = {row.variant};
    for (const auto& s : r.per_class) line.push_back(fixed(s.f1));
    grid.push_back(line);
  }
  return "Test-set scores (precision and F1 are macro averages)\n" + align_columns(table) +
         "\nPer-class F1\n" + align_columns(grid);
}

ordered_json gradcheck_to_json(const GradcheckReport& report) {
  auto check_json = [](const LayerCheck& c) {
    ordered_json tensors = ordered_json::array();
    for (const auto& t : c.tensors) tensors.push_back({{"name", t.name}, {"max_rel_error", t.max_rel_error}});
    return ordered_json{{"name", c.layer},
                        {"max_rel_error", c.max_rel_error},
                        {"passed", c.passed},
                        {"tensors", tensors}};
  };
  const auto& o = report.options;
  ordered_json j;
  j["variant"] = std::string(zoo::variant_name(o.variant));
  j["d_model"] = o.d_model;
  j["seq_len"] = o.seq_len;
  j["seeds"] = o.seeds;
  j["eps"] = o.eps;
  j["threshold"] = o.threshold;
  j["model_threshold"] = o.model_threshold;
  if (o.corrupt_op) j["corrupt_op"] = *o.corrupt_op;
  ordered_json layers = ordered_json::array();
  for (const auto& c : report.layers) layers.push_back(check_json(c));
  j["layers"] = layers;
  j["model"] = check_json(report.model);
  j["passed"] = report.passed;
  return j;
}

std::string format_gradcheck(const GradcheckReport& report) {
  const auto& o = report.options;
  std::ostringstream os;
  os << "gradient check: variant " << zoo::variant_name(o.variant) << ", d_model " << o.d_model
     << ", T " << o.seq_len << ", " << o.seeds << " seeds, eps " << o.eps << '\n';
  if (o.corrupt_op) os << "backward rule of '" << *o.corrupt_op << "' deliberately scaled by 1.5\n";
  std::vector<std::vector<std::string>> rows;
  for (const auto& c : report.layers) {
    rows.push_back({"layer " + c.layer, sci(c.max_rel_error), c.passed ? "PASS" : "FAIL"});
  }
  os << align_columns(rows);
  os << "end-to-end " << report.model.layer << " (" << report.model.tensors.size()
     << " parameter tensors, bound " << o.model_threshold << ")\n";
  rows.clear();
  for (const auto& t : report.model.tensors) {
    rows.push_back({"param " + t.name, sci(t.max_rel_error),
                    t.max_rel_error < o.model_threshold ? "PASS" : "FAIL"});
  }
  os << align_columns(rows);
  std::vector<std::string> failed;
  for (const auto& c : report.layers) {
    if (!c.passed) failed.push_back(c.layer);
  }
  if (!report.model.passed) failed.push_back(report.model.layer);
  if (failed.empty()) {
    os << "all checks passed\n";
  } else {
    os << "FAILED:";
    for (const auto& f : failed) os << ' ' << f;
    os << '\n';
  }
  return os.str();
}

}  // namespace dcebad::cli
