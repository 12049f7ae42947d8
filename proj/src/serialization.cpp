#include "aeval/serialization.hpp"

#include <fstream>
#include <sstream>

#include "aeval/error.hpp"

namespace aeval {
namespace {

Json opt(const MetricValue& v) { return v ? Json(*v) : Json(nullptr); }

MetricValue opt_metric(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

void to_json(Json& j, const ScoredPrediction& p) {
  j = Json{{"record_id", p.record_id},
           {"backend_id", p.backend_id},
           {"instruction_version", p.instruction_version},
           {"predicted_score", p.predicted_score ? Json(*p.predicted_score) : Json(nullptr)},
           {"reason", p.reason},
           {"raw_response", p.raw_response},
           {"icl_example_ids", p.icl_example_ids}};
}

void from_json(const Json& j, ScoredPrediction& p) {
  p.record_id = j.at("record_id").get<std::string>();
  p.backend_id = j.value("backend_id", "");
  p.instruction_version = j.value("instruction_version", 0);
  const auto& s = j.at("predicted_score");
  if (s.is_null()) {
    p.predicted_score.reset();
  } else {
    const int v = s.get<int>();
    if (v < 1 || v > 5) throw ValidationError("predicted_score outside [1,5] for " + p.record_id);
    p.predicted_score = v;
  }
  p.reason = j.value("reason", "");
  p.raw_response = j.value("raw_response", "");
  p.icl_example_ids = j.value("icl_example_ids", std::vector<std::string>{});
}

void to_json(Json& j, const MetricReport& r) {
  j = Json{{"task_id", to_string(r.task_id)},         {"n_records", r.n_records},
           {"n_failures", r.n_failures},              {"accuracy", opt(r.accuracy)},
           {"kendall_tau", opt(r.kendall_tau)},       {"spearman_rho", opt(r.spearman_rho)}};
}

void from_json(const Json& j, MetricReport& r) {
  r.task_id = parse_task_id(j.at("task_id").get<std::string>());
  r.n_records = j.at("n_records").get<std::size_t>();
  r.n_failures = j.at("n_failures").get<std::size_t>();
  r.accuracy = opt_metric(j.at("accuracy"));
  r.kendall_tau = opt_metric(j.at("kendall_tau"));
  r.spearman_rho = opt_metric(j.at("spearman_rho"));
}

void to_json(Json& j, const BestLLMSelection& s) {
  j = Json{{"task_id", to_string(s.task_id)},
           {"instruction_version", s.instruction_version},
           {"chosen_backend_id", s.chosen_backend_id},
           {"selection_metric", to_string(s.selection_metric)},
           {"per_backend_reports", s.per_backend_reports},
           {"disqualified", s.disqualified}};
}

void from_json(const Json& j, BestLLMSelection& s) {
  s.task_id = parse_task_id(j.at("task_id").get<std::string>());
  s.instruction_version = j.at("instruction_version").get<int>();
  s.chosen_backend_id = j.at("chosen_backend_id").get<std::string>();
  s.selection_metric = parse_selection_metric(j.at("selection_metric").get<std::string>());
  s.per_backend_reports = j.at("per_backend_reports").get<std::map<std::string, MetricReport>>();
  s.disqualified = j.at("disqualified").get<std::map<std::string, std::string>>();
}

void to_json(Json& j, const VoteBundle& b) {
  j = Json{{"record_id", b.record_id},
           {"member_predictions", b.member_predictions},
           {"integrator_backend_id", b.integrator_backend_id},
           {"final_score", b.final_score},
           {"final_reason", b.final_reason},
           {"raw_response", b.raw_response}};
}

void to_json(Json& j, const PromptVersion& v) {
  j = Json{{"index", v.index},
           {"text", v.text},
           {"parent", v.parent ? Json(*v.parent) : Json(nullptr)},
           {"validation_report", v.validation_report ? Json(*v.validation_report) : Json(nullptr)},
           {"sample_record_ids", v.sample_record_ids},
           {"valid", v.valid},
           {"note", v.note}};
}

void from_json(const Json& j, PromptVersion& v) {
  v.index = j.at("index").get<int>();
  v.text = j.at("text").get<std::string>();
  v.parent = j.at("parent").is_null() ? std::nullopt : std::optional<int>(j.at("parent").get<int>());
  if (j.at("validation_report").is_null()) {
    v.validation_report.reset();
  } else {
    v.validation_report = j.at("validation_report").get<MetricReport>();
  }
  v.sample_record_ids = j.at("sample_record_ids").get<std::vector<std::string>>();
  v.valid = j.value("valid", true);
  v.note = j.value("note", "");
}

void to_json(Json& j, const PromptLineage& l) {
  j = Json{{"task_id", to_string(l.task_id)}, {"best_version", l.best_version}, {"versions", l.versions}};
}

void from_json(const Json& j, PromptLineage& l) {
  l.task_id = parse_task_id(j.at("task_id").get<std::string>());
  l.best_version = j.at("best_version").get<int>();
  l.versions = j.at("versions").get<std::vector<PromptVersion>>();
  if (l.best_version < 0 || static_cast<std::size_t>(l.best_version) >= l.versions.size()) {
    throw ValidationError("lineage best_version out of range");
  }
}

void to_json(Json& j, const RankedExampleList& l) {
  Json entries = Json::array();
  for (const auto& e : l.entries) {
    entries.push_back({{"candidate_record_id", e.candidate_record_id},
                       {"abs_error", e.abs_error},
                       {"rank", e.rank},
                       {"raw_pred", e.raw_pred}});
  }
  j = Json{{"query_record_id", l.query_record_id},
           {"task_id", to_string(l.task_id)},
           {"entries", entries},
           {"dropped", l.dropped}};
}

void from_json(const Json& j, RankedExampleList& l) {
  l.query_record_id = j.at("query_record_id").get<std::string>();
  l.task_id = parse_task_id(j.at("task_id").get<std::string>());
  l.dropped = j.value("dropped", std::size_t{0});
  l.entries.clear();
  for (const auto& e : j.at("entries")) {
    l.entries.push_back({e.at("candidate_record_id").get<std::string>(), e.at("abs_error").get<int>(),
                         e.at("rank").get<int>(), e.at("raw_pred").get<int>()});
  }
}

void to_json(Json& j, const RetrieverHead& h) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < h.weights.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < h.weights.cols(); ++c) row.push_back(h.weights(r, c));
    rows.push_back(std::move(row));
  }
  j = Json{{"d_out", h.weights.rows()},
           {"d", h.weights.cols()},
           {"weights", rows},
           {"training_meta",
            {{"seed", h.meta.seed},
             {"steps", h.meta.steps},
             {"learning_rate", h.meta.learning_rate},
             {"momentum", h.meta.momentum},
             {"batch_size", h.meta.batch_size},
             {"form", to_string(h.meta.form)},
             {"n_pairs", h.meta.n_pairs},
             {"final_loss", h.meta.final_loss}}}};
}

void from_json(const Json& j, RetrieverHead& h) {
  const auto d_out = j.at("d_out").get<Eigen::Index>();
  const auto d = j.at("d").get<Eigen::Index>();
  const auto& rows = j.at("weights");
  if (static_cast<Eigen::Index>(rows.size()) != d_out) throw ValidationError("head: row count mismatch");
  h.weights = Matrix(d_out, d);
  for (Eigen::Index r = 0; r < d_out; ++r) {
    const auto& row = rows.at(static_cast<std::size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != d) throw ValidationError("head: column count mismatch");
    for (Eigen::Index c = 0; c < d; ++c) h.weights(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  const auto& m = j.at("training_meta");
  h.meta.seed = m.at("seed").get<std::uint64_t>();
  h.meta.steps = m.at("steps").get<int>();
  h.meta.learning_rate = m.at("learning_rate").get<double>();
  h.meta.momentum = m.value("momentum", 0.0);
  h.meta.batch_size = m.at("batch_size").get<int>();
  h.meta.form = parse_loss_form(m.at("form").get<std::string>());
  h.meta.n_pairs = m.at("n_pairs").get<std::size_t>();
  h.meta.final_loss = m.at("final_loss").get<double>();
  validate_head(h);
}

void to_json(Json& j, const DiversityResult& r) {
  Json picks = Json::array();
  for (const auto& p : r.picks) {
    picks.push_back({{"slot", to_string(p.slot)},
                     {"record_id", p.example.record.record_id},
                     {"human_score", p.example.record.gold()},
                     {"similarity", p.example.similarity}});
  }
  j = Json{{"picks", picks}, {"warnings", r.warnings}};
}

// ---------------------------------------------------------------------------

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

void write_json_file(const std::filesystem::path& path, const Json& value) {
  write_text_file(path, value.dump(2) + "\n");
}

namespace {

template <typename T>
std::vector<T> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::vector<T> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(Json::parse(line).get<T>());
    } catch (const Json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items) {
  std::ostringstream out;
  for (const auto& item : items) out << Json(item).dump() << '\n';
  write_text_file(path, out.str());
}

}  // namespace

std::vector<ScoredPrediction> read_predictions(const std::filesystem::path& path) {
  return read_jsonl<ScoredPrediction>(path);
}

void write_predictions(const std::filesystem::path& path, const std::vector<ScoredPrediction>& preds) {
  write_jsonl(path, preds);
}

std::vector<RankedExampleList> read_ranked_lists(const std::filesystem::path& path) {
  return read_jsonl<RankedExampleList>(path);
}

void write_ranked_lists(const std::filesystem::path& path,
                        const std::vector<RankedExampleList>& lists) {
  write_jsonl(path, lists);
}

}  // namespace aeval
