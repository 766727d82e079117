#include "kpiforge/forest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "json.hpp"

#include "kpiforge/error.hpp"
#include "kpiforge/hash.hpp"
#include "kpiforge/rng.hpp"

namespace kpiforge {

using nlohmann::json;

namespace {

constexpr int kModelFormatVersion = 1;
constexpr std::string_view kModelFormat = "kpiforge-forest";

}  // namespace

std::string_view to_string(EvalMode mode) noexcept { return mode == EvalMode::oob ? "oob" : "holdout"; }

ForestParams resolve_params(ForestParams params, TaskKind task, std::size_t n_features) {
  if (params.n_trees == 0) throw Error(ErrorCode::InvalidParams, "n_trees must be >= 1");
  if (n_features == 0) throw Error(ErrorCode::InvalidParams, "table has no feature columns");
  auto& tree = params.tree;
  if (tree.min_samples_leaf < 1) throw Error(ErrorCode::InvalidParams, "min_samples_leaf must be >= 1");
  if (tree.min_samples_split < 2) throw Error(ErrorCode::InvalidParams, "min_samples_split must be >= 2");
  if (!tree.mtry) {
    if (task == TaskKind::classification) {
      tree.mtry = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n_features))));
    } else {
      tree.mtry = std::max<std::size_t>(1, n_features / 3);
    }
  } else if (*tree.mtry == kAllFeatures) {
    tree.mtry = n_features;
  }
  if (*tree.mtry == 0 || *tree.mtry > n_features) {
    throw Error(ErrorCode::InvalidParams, "mtry=" + std::to_string(*tree.mtry) + " exceeds the " +
                                              std::to_string(n_features) + " available features");
  }
  if (!tree.criterion) tree.criterion = default_criterion(task);
  if (!criterion_matches(*tree.criterion, task)) {
    throw Error(ErrorCode::InvalidParams, "criterion '" + std::string(to_string(*tree.criterion)) +
                                              "' does not apply to " + std::string(to_string(task)));
  }
  return params;
}

std::size_t resolve_workers(std::size_t requested) noexcept {
  if (requested != 0) return requested;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& body) {
  workers = std::min(resolve_workers(workers), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
          try {
            body(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (const auto& error : errors) {
    if (error) std::rethrow_exception(error);
  }
}

// ---------------------------------------------------------------- schema / encoding

ModelSchema ModelSchema::from_table(const Table& table) {
  ModelSchema schema;
  for (std::size_t f = 0; f < table.n_features(); ++f) {
    const auto& col = table.feature(f);
    schema.features.push_back(col.spec);
    schema.feature_dictionaries.push_back(col.spec.kind == ColumnKind::categorical ? col.dictionary
                                                                                   : std::vector<std::string>{});
  }
  schema.target = table.target().spec;
  if (table.task() == TaskKind::classification) schema.class_labels = table.target().dictionary;
  return schema;
}

std::vector<std::string> ModelSchema::feature_names() const {
  std::vector<std::string> names;
  for (const auto& spec : features) names.push_back(spec.name);
  return names;
}

std::uint64_t ModelSchema::fingerprint() const {
  Fnv1a h;
  for (const auto& spec : features) {
    h.str(spec.name);
    h.str(to_string(spec.kind));
  }
  h.str(target.name);
  h.str(to_string(target.kind));
  return h.state;
}

namespace {

std::vector<double> recode(const Column& col, const std::vector<std::string>& reference) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < reference.size(); ++i) index.emplace(reference[i], i);
  std::vector<double> mapping(col.dictionary.size());
  std::size_t next_unseen = reference.size();
  for (std::size_t c = 0; c < col.dictionary.size(); ++c) {
    const auto it = index.find(col.dictionary[c]);
    mapping[c] = static_cast<double>(it != index.end() ? it->second : next_unseen++);
  }
  std::vector<double> out(col.values.size());
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r] = col.missing[r] ? col.values[r] : mapping[static_cast<std::size_t>(col.code(r))];
  }
  return out;
}

}  // namespace

EncodedTable::EncodedTable(const ModelSchema& schema, TaskKind task, const Table& table)
    : task_(task), n_classes_(schema.class_labels.size()), n_rows_(table.n_rows()) {
  for (std::size_t f = 0; f < schema.features.size(); ++f) {
    const auto& spec = schema.features[f];
    const auto index = table.schema().index_of(spec.name);
    if (!index || table.schema().columns()[*index].role != ColumnRole::feature) {
      throw Error(ErrorCode::SchemaMismatch, "data lacks model feature '" + spec.name + "'");
    }
    const auto& col = table.column(*index);
    if (col.spec.kind != spec.kind) {
      throw Error(ErrorCode::SchemaMismatch, "feature '" + spec.name + "' is " + std::string(to_string(col.spec.kind)) +
                                                 ", model expects " + std::string(to_string(spec.kind)));
    }
    columns_.push_back(spec.kind == ColumnKind::numeric ? col.values : recode(col, schema.feature_dictionaries[f]));
    kinds_.push_back(spec.kind);
  }
  if (table.n_features() != schema.features.size()) {
    throw Error(ErrorCode::SchemaMismatch, "data declares " + std::to_string(table.n_features()) +
                                               " features, model has " + std::to_string(schema.features.size()));
  }
  const auto& target = table.target();
  if (target.spec.name != schema.target.name || target.spec.kind != schema.target.kind) {
    throw Error(ErrorCode::SchemaMismatch, "target '" + target.spec.name + "' does not match model target '" +
                                               schema.target.name + "'");
  }
  target_ = task == TaskKind::classification ? recode(target, schema.class_labels) : target.values;
}

FeatureView EncodedTable::features() const {
  FeatureView view;
  view.n_rows = n_rows_;
  view.kinds = kinds_;
  for (const auto& col : columns_) view.columns.emplace_back(col);
  return view;
}

TargetView EncodedTable::targets() const {
  TargetView view;
  view.task = task_;
  view.values = target_;
  view.n_classes = n_classes_;
  return view;
}

// ---------------------------------------------------------------- model

ForestModel::ForestModel(ForestParams params, TaskKind task, ModelSchema schema, std::vector<TreeModel> trees,
                         std::vector<std::vector<std::uint32_t>> inbag)
    : params_(std::move(params)),
      task_(task),
      schema_(std::move(schema)),
      trees_(std::move(trees)),
      inbag_(std::move(inbag)) {
  if (trees_.empty() || trees_.size() != params_.n_trees || inbag_.size() != trees_.size()) {
    throw Error(ErrorCode::CorruptFile, "forest tree count does not match its parameters");
  }
}

std::vector<double> ForestModel::aggregate(const FeatureView& features, std::size_t row) const {
  if (features.n_features() != n_features()) {
    throw Error(ErrorCode::SchemaMismatch, "feature count differs from the training schema");
  }
  if (task_ == TaskKind::classification) {
    std::vector<double> scores(n_classes(), 0.0);
    for (const auto& tree : trees_) {
      const auto& value = tree.nodes[tree.leaf_index(features, row)].value;
      for (std::size_t k = 0; k < scores.size(); ++k) scores[k] += value[k];
    }
    return scores;
  }
  double sum = 0.0;
  for (const auto& tree : trees_) sum += tree.nodes[tree.leaf_index(features, row)].value[0];
  return {sum / static_cast<double>(trees_.size())};
}

double ForestModel::predict(const FeatureView& features, std::size_t row) const {
  const auto agg = aggregate(features, row);
  return task_ == TaskKind::classification ? static_cast<double>(argmax_class(agg)) : agg[0];
}

double ForestModel::predict(std::span<const double> row) const {
  if (row.size() != n_features()) {
    throw Error(ErrorCode::SchemaMismatch, "row has " + std::to_string(row.size()) + " features, model expects " +
                                               std::to_string(n_features()));
  }
  FeatureView view;
  view.n_rows = 1;
  for (std::size_t f = 0; f < row.size(); ++f) {
    view.columns.emplace_back(row.subspan(f, 1));
    view.kinds.push_back(schema_.features[f].kind);
  }
  return predict(view, 0);
}

std::vector<double> ForestModel::predict(const Table& table) const {
  const auto encoded = encode(table);
  const auto view = encoded.features();
  std::vector<double> out(table.n_rows());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = predict(view, r);
  return out;
}

// ---------------------------------------------------------------- serialization

namespace {

json spec_to_json(const ColumnSpec& spec) {
  return json{{"name", spec.name},
              {"kind", to_string(spec.kind)},
              {"role", to_string(spec.role)},
              {"missing_policy", to_string(spec.missing_policy)}};
}

ColumnSpec spec_from_json(const json& j) {
  ColumnSpec spec;
  spec.name = j.at("name").get<std::string>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "numeric") {
    spec.kind = ColumnKind::numeric;
  } else if (kind == "categorical") {
    spec.kind = ColumnKind::categorical;
  } else {
    throw Error(ErrorCode::CorruptFile, "unknown column kind '" + kind + "'");
  }
  const auto role = j.at("role").get<std::string>();
  spec.role = role == "target" ? ColumnRole::target : role == "ignored" ? ColumnRole::ignored : ColumnRole::feature;
  spec.missing_policy =
      j.at("missing_policy").get<std::string>() == "impute" ? MissingPolicy::impute : MissingPolicy::reject;
  return spec;
}

json params_to_json(const ForestParams& p) {
  json tree{{"min_samples_leaf", p.tree.min_samples_leaf}, {"min_samples_split", p.tree.min_samples_split}};
  tree["max_depth"] = p.tree.max_depth ? json(*p.tree.max_depth) : json(nullptr);
  tree["mtry"] = p.tree.mtry ? json(*p.tree.mtry) : json(nullptr);
  tree["criterion"] = p.tree.criterion ? json(to_string(*p.tree.criterion)) : json(nullptr);
  return json{{"n_trees", p.n_trees}, {"bootstrap", p.bootstrap}, {"master_seed", p.master_seed}, {"tree", tree}};
}

ForestParams params_from_json(const json& j) {
  ForestParams p;
  p.n_trees = j.at("n_trees").get<std::size_t>();
  p.bootstrap = j.at("bootstrap").get<bool>();
  p.master_seed = j.at("master_seed").get<std::uint64_t>();
  const auto& t = j.at("tree");
  p.tree.min_samples_leaf = t.at("min_samples_leaf").get<std::size_t>();
  p.tree.min_samples_split = t.at("min_samples_split").get<std::size_t>();
  if (!t.at("max_depth").is_null()) p.tree.max_depth = t.at("max_depth").get<std::size_t>();
  if (!t.at("mtry").is_null()) p.tree.mtry = t.at("mtry").get<std::size_t>();
  if (!t.at("criterion").is_null()) {
    p.tree.criterion = parse_criterion(t.at("criterion").get<std::string>());
    if (!p.tree.criterion) throw Error(ErrorCode::CorruptFile, "unknown split criterion");
  }
  return p;
}

// Node layout: [feature, kind, threshold, category, left, right,
//               impurity_decrease, n_samples, impurity, [value...]]
json node_to_json(const TreeNode& n) {
  return json::array({n.feature, n.kind == ColumnKind::numeric ? 0 : 1, n.threshold, n.category, n.left, n.right,
                      n.impurity_decrease, n.n_samples, n.impurity, n.value});
}

TreeNode node_from_json(const json& j) {
  if (!j.is_array() || j.size() != 10) throw Error(ErrorCode::CorruptFile, "malformed tree node");
  TreeNode n;
  n.feature = j[0].get<std::int32_t>();
  n.kind = j[1].get<int>() == 0 ? ColumnKind::numeric : ColumnKind::categorical;
  n.threshold = j[2].get<double>();
  n.category = j[3].get<std::int32_t>();
  n.left = j[4].get<std::int32_t>();
  n.right = j[5].get<std::int32_t>();
  n.impurity_decrease = j[6].get<double>();
  n.n_samples = j[7].get<std::size_t>();
  n.impurity = j[8].get<double>();
  n.value = j[9].get<std::vector<double>>();
  return n;
}

void validate_tree(const TreeModel& tree, std::size_t value_size) {
  const auto n = static_cast<std::int32_t>(tree.nodes.size());
  if (n == 0) throw Error(ErrorCode::CorruptFile, "empty tree");
  for (std::int32_t i = 0; i < n; ++i) {
    const auto& node = tree.nodes[static_cast<std::size_t>(i)];
    if (node.value.size() != value_size) throw Error(ErrorCode::CorruptFile, "leaf value has wrong width");
    if (node.is_leaf()) continue;
    // Pre-order layout: children come strictly after their parent.
    if (node.left <= i || node.right <= i || node.left >= n || node.right >= n ||
        static_cast<std::size_t>(node.feature) >= tree.n_features) {
      throw Error(ErrorCode::CorruptFile, "tree node references are out of range");
    }
  }
}

}  // namespace

std::string ForestModel::serialize() const {
  json features = json::array();
  for (std::size_t f = 0; f < schema_.features.size(); ++f) {
    auto spec = spec_to_json(schema_.features[f]);
    spec["dictionary"] = schema_.feature_dictionaries[f];
    features.push_back(std::move(spec));
  }
  json trees = json::array();
  for (const auto& tree : trees_) {
    json nodes = json::array();
    for (const auto& node : tree.nodes) nodes.push_back(node_to_json(node));
    trees.push_back(std::move(nodes));
  }
  json doc{{"format", kModelFormat},
           {"format_version", kModelFormatVersion},
           {"task", to_string(task_)},
           {"params", params_to_json(params_)},
           {"schema",
            {{"features", std::move(features)},
             {"target", spec_to_json(schema_.target)},
             {"class_labels", schema_.class_labels},
             {"fingerprint", hex64(schema_.fingerprint())}}},
           {"trees", std::move(trees)},
           {"inbag", inbag_}};
  return doc.dump() + "\n";
}

ForestModel ForestModel::deserialize(std::string_view text, std::string_view origin) {
  try {
    const json doc = json::parse(text);
    if (doc.at("format").get<std::string>() != kModelFormat) {
      throw Error(ErrorCode::CorruptFile, "not a forest model file", std::string(origin));
    }
    if (doc.at("format_version").get<int>() != kModelFormatVersion) {
      throw Error(ErrorCode::UnsupportedVersion,
                  "model format_version " + std::to_string(doc.at("format_version").get<int>()) + " is not supported",
                  std::string(origin));
    }
    const TaskKind task =
        doc.at("task").get<std::string>() == "regression" ? TaskKind::regression : TaskKind::classification;
    ModelSchema schema;
    for (const auto& f : doc.at("schema").at("features")) {
      schema.features.push_back(spec_from_json(f));
      schema.feature_dictionaries.push_back(f.at("dictionary").get<std::vector<std::string>>());
    }
    schema.target = spec_from_json(doc.at("schema").at("target"));
    schema.class_labels = doc.at("schema").at("class_labels").get<std::vector<std::string>>();
    if (doc.at("schema").at("fingerprint").get<std::string>() != hex64(schema.fingerprint())) {
      throw Error(ErrorCode::CorruptFile, "schema fingerprint mismatch", std::string(origin));
    }
    const std::size_t value_size = task == TaskKind::classification ? schema.class_labels.size() : 1;
    std::vector<TreeModel> trees;
    for (const auto& jt : doc.at("trees")) {
      TreeModel tree;
      tree.task = task;
      tree.n_features = schema.features.size();
      tree.n_classes = schema.class_labels.size();
      for (const auto& jn : jt) tree.nodes.push_back(node_from_json(jn));
      validate_tree(tree, value_size);
      trees.push_back(std::move(tree));
    }
    auto inbag = doc.at("inbag").get<std::vector<std::vector<std::uint32_t>>>();
    for (const auto& counts : inbag) {
      if (counts.size() != inbag.front().size()) throw Error(ErrorCode::CorruptFile, "ragged in-bag table");
    }
    return ForestModel(params_from_json(doc.at("params")), task, std::move(schema), std::move(trees),
                       std::move(inbag));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("malformed model file: ") + e.what(), std::string(origin));
  } catch (const Error& e) {
    if (!e.context().empty()) throw;
    throw Error(e.code(), e.detail(), std::string(origin));
  }
}

void ForestModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write model file", path.string());
  out << serialize();
  if (!out) throw Error(ErrorCode::IoError, "write failed", path.string());
}

ForestModel ForestModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open model file", path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize(buffer.str(), path.string());
}

std::string ForestModel::fingerprint() const {
  Fnv1a h;
  const auto text = serialize();
  h.bytes(text.data(), text.size());
  return hex64(h.state);
}

// ---------------------------------------------------------------- training

ForestModel fit_forest(const Table& table, const ForestParams& params, const FitOptions& options) {
  const std::size_t n = table.n_rows();
  if (n < 2) throw Error(ErrorCode::EmptyTrainingSet, "need at least 2 training rows, got " + std::to_string(n));
  if (n > std::numeric_limits<std::uint32_t>::max()) throw Error(ErrorCode::InvalidParams, "too many rows");
  for (std::size_t f = 0; f < table.n_features(); ++f) {
    if (table.feature(f).missing_count() > 0) {
      throw Error(ErrorCode::RejectedMissing,
                  "feature '" + table.feature(f).spec.name + "' has missing cells; clean the table first");
    }
  }
  const TaskKind task = table.task();
  const ForestParams resolved = resolve_params(params, task, table.n_features());
  const FeatureView features = table.feature_view();
  const TargetView target = table.target_view();

  std::vector<TreeModel> trees(resolved.n_trees);
  std::vector<std::vector<std::uint32_t>> inbag(resolved.n_trees);
  parallel_for(resolved.n_trees, options.workers, [&](std::size_t t) {
    Rng rng(derive_seed(resolved.master_seed, {t}));
    std::vector<std::uint32_t> counts(n, resolved.bootstrap ? 0u : 1u);
    if (resolved.bootstrap) {
      for (std::size_t draw = 0; draw < n; ++draw) ++counts[static_cast<std::size_t>(rng.uniform_index(n))];
    }
    std::vector<std::size_t> rows;
    rows.reserve(n);
    for (std::size_t r = 0; r < n; ++r) rows.insert(rows.end(), counts[r], r);
    trees[t] = fit_tree(features, target, rows, resolved.tree, rng);
    inbag[t] = std::move(counts);
  });
  return ForestModel(resolved, task, ModelSchema::from_table(table), std::move(trees), std::move(inbag));
}

// ---------------------------------------------------------------- evaluation

MetricReport compute_metric(TaskKind task, std::span<const double> predictions, std::span<const double> truth) {
  MetricReport report;
  report.task = task;
  report.n_rows = predictions.size();
  if (predictions.empty()) return report;
  const double n = static_cast<double>(predictions.size());
  if (task == TaskKind::classification) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) correct += predictions[i] == truth[i] ? 1 : 0;
    report.accuracy = static_cast<double>(correct) / n;
    return report;
  }
  double mean = 0.0;
  for (const double t : truth) mean += t;
  mean /= n;
  double sse = 0.0;
  double sst = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    sse += (predictions[i] - truth[i]) * (predictions[i] - truth[i]);
    sst += (truth[i] - mean) * (truth[i] - mean);
  }
  report.mse = sse / n;
  // Constant truth: R^2 is 1 for an exact fit and 0 otherwise.
  report.r2 = sst > 0.0 ? 1.0 - sse / sst : (sse == 0.0 ? 1.0 : 0.0);
  return report;
}

EnsembleEvaluator::EnsembleEvaluator(const ForestModel& forest, const FeatureView& features,
                                     const TargetView& target, EvalMode mode)
    : forest_(forest), features_(features), target_(target) {
  if (features.n_features() != forest.n_features()) {
    throw Error(ErrorCode::SchemaMismatch, "feature count differs from the training schema");
  }
  const std::size_t n = features.n_rows;
  const auto& trees = forest.trees();
  if (mode == EvalMode::oob && n != forest.n_training_rows()) {
    throw Error(ErrorCode::SchemaMismatch, "OOB evaluation needs the training table (" +
                                               std::to_string(forest.n_training_rows()) + " rows), got " +
                                               std::to_string(n) + " rows");
  }
  rows_.resize(trees.size());
  leaves_.resize(trees.size());
  std::vector<std::size_t> coverage(n, 0);
  double oob_total = 0.0;
  for (std::size_t t = 0; t < trees.size(); ++t) {
    for (std::size_t r = 0; r < n; ++r) {
      if (mode == EvalMode::holdout || forest.inbag()[t][r] == 0) {
        rows_[t].push_back(static_cast<std::uint32_t>(r));
        leaves_[t].push_back(static_cast<std::uint32_t>(trees[t].leaf_index(features, r)));
        ++coverage[r];
      }
    }
    oob_total += n == 0 ? 0.0 : static_cast<double>(rows_[t].size()) / static_cast<double>(n);
  }
  mean_oob_fraction_ = trees.empty() ? 0.0 : oob_total / static_cast<double>(trees.size());
  std::vector<std::size_t> uncovered;
  for (std::size_t r = 0; r < n; ++r) {
    if (coverage[r] == 0) uncovered.push_back(r);
  }
  if (!uncovered.empty()) throw NoOobCoverageError(std::move(uncovered));
  if (n == 0) throw Error(ErrorCode::EmptyWindow, "no rows to evaluate");
}

MetricReport EnsembleEvaluator::score(std::span<const std::vector<std::uint32_t>* const> leaves) const {
  const std::size_t n = features_.n_rows;
  const auto& trees = forest_.trees();
  std::vector<double> predictions(n);
  if (forest_.task() == TaskKind::classification) {
    const std::size_t k = forest_.n_classes();
    std::vector<double> scores(n * k, 0.0);
    for (std::size_t t = 0; t < trees.size(); ++t) {
      const auto& rows = rows_[t];
      const auto& tree_leaves = *leaves[t];
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& value = trees[t].nodes[tree_leaves[i]].value;
        double* dst = scores.data() + static_cast<std::size_t>(rows[i]) * k;
        for (std::size_t c = 0; c < k; ++c) dst[c] += value[c];
      }
    }
    for (std::size_t r = 0; r < n; ++r) {
      predictions[r] = static_cast<double>(argmax_class(std::span<const double>(scores).subspan(r * k, k)));
    }
  } else {
    std::vector<double> sums(n, 0.0);
    std::vector<std::size_t> counts(n, 0);
    for (std::size_t t = 0; t < trees.size(); ++t) {
      const auto& rows = rows_[t];
      const auto& tree_leaves = *leaves[t];
      for (std::size_t i = 0; i < rows.size(); ++i) {
        sums[rows[i]] += trees[t].nodes[tree_leaves[i]].value[0];
        ++counts[rows[i]];
      }
    }
    for (std::size_t r = 0; r < n; ++r) predictions[r] = sums[r] / static_cast<double>(counts[r]);
  }
  return compute_metric(forest_.task(), predictions, target_.values);
}

MetricReport EnsembleEvaluator::baseline() const {
  std::vector<const std::vector<std::uint32_t>*> leaves;
  for (const auto& l : leaves_) leaves.push_back(&l);
  return score(leaves);
}

MetricReport EnsembleEvaluator::with_column(std::size_t feature, std::span<const double> replacement) const {
  if (feature >= features_.n_features() || replacement.size() != features_.n_rows) {
    throw Error(ErrorCode::InvalidParams, "replacement column does not fit the evaluation table");
  }
  FeatureView view = features_;
  view.columns[feature] = replacement;
  const auto& trees = forest_.trees();
  std::vector<std::vector<std::uint32_t>> rerouted(trees.size());
  std::vector<const std::vector<std::uint32_t>*> leaves(trees.size());
  for (std::size_t t = 0; t < trees.size(); ++t) {
    if (!trees[t].uses_feature(feature)) {
      leaves[t] = &leaves_[t];
      continue;
    }
    rerouted[t].reserve(rows_[t].size());
    for (const auto r : rows_[t]) rerouted[t].push_back(static_cast<std::uint32_t>(trees[t].leaf_index(view, r)));
    leaves[t] = &rerouted[t];
  }
  return score(leaves);
}

MetricReport oob_score(const ForestModel& forest, const Table& table) {
  const auto encoded = forest.encode(table);
  return EnsembleEvaluator(forest, encoded.features(), encoded.targets(), EvalMode::oob).baseline();
}

MetricReport holdout_score(const ForestModel& forest, const Table& holdout) {
  const auto encoded = forest.encode(holdout);
  return EnsembleEvaluator(forest, encoded.features(), encoded.targets(), EvalMode::holdout).baseline();
}

}  // namespace kpiforge
