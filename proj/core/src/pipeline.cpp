#include "wr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "wr/aggregation.hpp"
#include "wr/io.hpp"
#include "wr/rerank.hpp"
#include "wr/retrieval.hpp"
#include "wr/rng.hpp"
#include "wr/trainer.hpp"

namespace wr::pipeline {

using nlohmann::json;

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::cluster: return "cluster";
    case Stage::train: return "train";
    case Stage::encode: return "encode";
    case Stage::evaluate: return "evaluate";
    case Stage::rerank: return "rerank";
    case Stage::sweep: return "sweep";
    case Stage::report: return "report";
  }
  return "cluster";
}

Stage stage_from_string(const std::string& name) {
  for (Stage s : {Stage::cluster, Stage::train, Stage::encode, Stage::evaluate, Stage::rerank, Stage::sweep,
                  Stage::report}) {
    if (to_string(s) == name) return s;
  }
  throw ValidationError("unknown stage '" + name + "'");
}

const std::vector<StageSpec>& stage_graph() {
  static const std::vector<StageSpec> graph{
      {Stage::cluster, {}, {"features.model", "trainset.model", "cluster_report.json"}},
      {Stage::train, {"trainset.model"}, {"network.model", "train_report.json"}},
      {Stage::encode,
       {"features.model", "network.model"},
       {"embeddings.wrem", "embeddings.json", "whitening.model", "encode_report.json"}},
      {Stage::evaluate, {"embeddings.wrem"}, {"eval_report.json", "eval_report.csv"}},
      {Stage::rerank, {"embeddings.wrem"}, {"reranked.wrem", "reranked.json", "rerank_report.json"}},
      {Stage::sweep, {"embeddings.wrem"}, {"sweep.csv"}},
      {Stage::report, {"eval_report.json"}, {"summary.json"}},
  };
  return graph;
}

std::vector<Stage> check_stage_graph(const std::vector<StageSpec>& graph) {
  std::map<std::string, std::size_t> producer;
  for (std::size_t i = 0; i < graph.size(); ++i) {
    for (const auto& out : graph[i].outputs) {
      if (!producer.emplace(out, i).second) throw std::logic_error("stage graph: '" + out + "' has two producers");
    }
  }
  std::vector<std::set<std::size_t>> deps(graph.size());
  for (std::size_t i = 0; i < graph.size(); ++i) {
    for (const auto& in : graph[i].inputs) {
      auto it = producer.find(in);
      if (it == producer.end()) throw std::logic_error("stage graph: nothing produces '" + in + "'");
      if (it->second == i) {
        throw std::logic_error("stage graph: " + to_string(graph[i].stage) + " reads its own output '" + in + "'");
      }
      deps[i].insert(it->second);
    }
  }
  // Kahn's algorithm
  std::vector<Stage> order;
  std::vector<bool> done(graph.size(), false);
  for (bool progress = true; progress;) {
    progress = false;
    for (std::size_t i = 0; i < graph.size(); ++i) {
      if (done[i]) continue;
      if (std::all_of(deps[i].begin(), deps[i].end(), [&](std::size_t d) { return done[d]; })) {
        done[i] = true;
        order.push_back(graph[i].stage);
        progress = true;
      }
    }
  }
  if (order.size() != graph.size()) throw std::logic_error("stage graph has a cycle");
  return order;
}

WorkdirLock::WorkdirLock(const fs::path& workdir) : path_(workdir / ".lock") {
  std::error_code ec;
  fs::create_directories(workdir, ec);
  if (ec) throw IoError("cannot create workdir " + workdir.string() + ": " + ec.message());
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f) {
    if (fs::exists(path_)) {
      throw IoError("workdir " + workdir.string() + " is locked by another run (delete " + path_.string() +
                    " if it is stale)");
    }
    throw IoError("cannot create lock file " + path_.string());
  }
  std::fclose(f);
}

WorkdirLock::~WorkdirLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

Matrix FeatureModel::preprocess(const Matrix& raw) const {
  return pca.transform_rows(hellinger ? features::hellinger_normalize_rows(raw) : raw);
}

Vector encode_page(const FeatureModel& features, const encoder::EncoderModel& model, const Matrix& raw,
                   double power_alpha) {
  const Matrix encodings = model.encode_rows(features.preprocess(raw));
  return aggregation::power_normalize(aggregation::pool_page(encodings), power_alpha);
}

Index auto_whiten_dim(Index fit_pages, Index raw_dim) {
  // about one whitened dimension per seven pages, capped by rank and raw dim
  return std::max<Index>(1, std::min({raw_dim, fit_pages / 7, fit_pages - 1}));
}

namespace {

struct Context {
  const PipelineConfig& config;
  Stage stage;
  fs::path dir;

  fs::path out(const std::string& name) const { return dir / name; }

  fs::path in(const std::string& name) const {
    const fs::path p = dir / name;
    if (!fs::exists(p)) {
      std::string producer = "?";
      for (const auto& s : stage_graph()) {
        if (std::find(s.outputs.begin(), s.outputs.end(), name) != s.outputs.end()) producer = to_string(s.stage);
      }
      throw IoError(to_string(stage) + ": missing upstream artifact " + p.string() + " (run the '" + producer +
                    "' stage first)");
    }
    return p;
  }

  json stamp(json report) const {
    report["stage"] = to_string(stage);
    report["config_hash"] = config.hash();
    report["seed"] = config.seed;
    return report;
  }
};

std::string manifest_for_training(const PipelineConfig& c) {
  const std::string& m = c.train_manifest.empty() ? c.manifest : c.train_manifest;
  require(!m.empty(), "config: manifest is required");
  return m;
}

FeatureModel load_features(const fs::path& path) {
  const auto file = io::ModelFile::load(path, "features");
  FeatureModel f;
  f.hellinger = file.meta().at("hellinger").get<bool>();
  f.pca = features::PcaModel::load_from(file, "pca");
  return f;
}

StageResult run_cluster(const Context& ctx) {
  const auto& cfg = ctx.config;
  const auto manifest = dataset::load_manifest(manifest_for_training(cfg));
  require(!manifest.pages.empty(), "cluster: manifest has no pages");

  std::vector<Matrix> per_page;
  Index rows = 0;
  for (const auto& page : manifest.pages) {
    per_page.push_back(dataset::load_page_descriptors(page, cfg.features.max_descriptors_per_page));
    require(per_page.back().cols() == per_page.front().cols(),
            "cluster: page '" + page.page_id + "' has a different descriptor dimension");
    rows += per_page.back().rows();
  }
  Matrix raw(rows, per_page.front().cols());
  Index at = 0;
  for (const auto& m : per_page) {
    raw.middleRows(at, m.rows()) = m;
    at += m.rows();
  }

  FeatureModel fm;
  fm.hellinger = cfg.features.hellinger;
  const Matrix normalized = fm.hellinger ? features::hellinger_normalize_rows(raw) : raw;
  fm.pca = features::fit_pca(normalized, cfg.features.pca_dim, cfg.features.pca_whiten);
  const Matrix data = fm.pca.transform_rows(normalized);

  const auto clusters = features::fit_kmeans(data, cfg.features.n_clusters, derive_seed(cfg.seed, "cluster"));
  const auto labeled = features::assign_and_filter(clusters, data, cfg.features.rho);

  io::ModelFile features_file("features");
  features_file.meta()["hellinger"] = fm.hellinger;
  features_file.meta()["config_hash"] = cfg.hash();
  fm.pca.save_to(features_file, "pca");
  features_file.save(ctx.out("features.model"));

  io::ModelFile trainset("trainset");
  trainset.meta()["rho"] = cfg.features.rho;
  trainset.meta()["n_clusters"] = clusters.n_clusters();
  trainset.meta()["config_hash"] = cfg.hash();
  Matrix items(static_cast<Index>(labeled.items.size()), 2);
  for (std::size_t i = 0; i < labeled.items.size(); ++i) {
    items(static_cast<Index>(i), 0) = static_cast<double>(labeled.items[i].descriptor);
    items(static_cast<Index>(i), 1) = static_cast<double>(labeled.items[i].label);
  }
  trainset.add("descriptors", data);
  trainset.add("items", items);
  trainset.add("centers", clusters.centers);
  trainset.save(ctx.out("trainset.model"));

  json report = {{"pages", manifest.pages.size()},
                 {"descriptors", rows},
                 {"n_clusters", clusters.n_clusters()},
                 {"inertia", clusters.inertia},
                 {"kmeans_iterations", clusters.iterations},
                 {"kept", labeled.items.size()},
                 {"rejected", labeled.rejected.size()}};
  report = ctx.stamp(report);
  io::write_json(ctx.out("cluster_report.json"), report);
  return {report, {ctx.out("features.model"), ctx.out("trainset.model"), ctx.out("cluster_report.json")}};
}

StageResult run_train(const Context& ctx) {
  const auto file = io::ModelFile::load(ctx.in("trainset.model"), "trainset");
  const Matrix& data = file.get("descriptors");
  const Matrix& items = file.get("items");
  features::PseudoLabeledSet labeled;
  for (Index i = 0; i < items.rows(); ++i) {
    labeled.items.push_back({static_cast<Index>(items(i, 0)), static_cast<Index>(items(i, 1))});
  }
  const auto result = trainer::train(data, labeled, ctx.config.model, ctx.config.train);

  io::ModelFile network("encoder");
  result.model.save_to(network);
  network.meta()["config_hash"] = ctx.config.hash();
  network.save(ctx.out("network.model"));

  const json report = ctx.stamp(result.report.to_json());
  io::write_json(ctx.out("train_report.json"), report);
  return {report, {ctx.out("network.model"), ctx.out("train_report.json")}};
}

std::vector<aggregation::RawPage> encode_manifest(const dataset::Manifest& manifest, const FeatureModel& fm,
                                                  const encoder::EncoderModel& model, const PipelineConfig& cfg) {
  std::vector<aggregation::RawPage> out;
  out.reserve(manifest.pages.size());
  for (const auto& page : manifest.pages) {
    const Matrix raw = dataset::load_page_descriptors(page, cfg.features.max_descriptors_per_page);
    require(raw.cols() == fm.pca.input_dim(), "encode: page '" + page.page_id + "' has descriptor dimension " +
                                                  std::to_string(raw.cols()) + ", the features model expects " +
                                                  std::to_string(fm.pca.input_dim()));
    out.push_back({page.page_id, page.writer_id, encode_page(fm, model, raw, cfg.aggregation.power_alpha)});
  }
  return out;
}

StageResult run_encode(const Context& ctx) {
  const auto& cfg = ctx.config;
  const FeatureModel fm = load_features(ctx.in("features.model"));
  const auto model = encoder::EncoderModel::load_from(io::ModelFile::load(ctx.in("network.model"), "encoder"));
  require(!cfg.manifest.empty(), "config: manifest is required");
  const auto manifest = dataset::load_manifest(cfg.manifest);
  require(!manifest.pages.empty(), "encode: manifest has no pages");

  const auto raw = encode_manifest(manifest, fm, model, cfg);
  std::vector<aggregation::RawPage> fit_pages;
  if (cfg.aggregation.whiten_fit == "train") {
    require(!cfg.train_manifest.empty(), "encode: whiten_fit = train needs train_manifest");
    fit_pages = encode_manifest(dataset::load_manifest(cfg.train_manifest), fm, model, cfg);
  }
  const auto& fit = fit_pages.empty() ? raw : fit_pages;
  const Index fit_n = static_cast<Index>(fit.size());
  const Index raw_dim = raw.front().vector.size();

  io::ModelFile whitening("whitening");
  json meta = {{"config_hash", cfg.hash()}, {"seed", cfg.seed}, {"whiten_fit", cfg.aggregation.whiten_fit}};
  PageSet pages;
  Index whiten_dim = 0;
  if (fit_n <= 2) {
    // too few pages to estimate a covariance: keep the l2-normalized pooled vectors
    for (const auto& r : raw) pages.push_back({r.page_id, r.writer_id, l2_normalized(r.vector)});
    meta["whitening"] = "skipped";
  } else {
    whiten_dim = cfg.aggregation.whiten_dim > 0 ? cfg.aggregation.whiten_dim : auto_whiten_dim(fit_n, raw_dim);
    auto result = aggregation::whiten_pages(raw, whiten_dim, fit_pages.empty() ? nullptr : &fit_pages);
    pages = std::move(result.pages);
    result.model.save_to(whitening, "pca");
    meta["whitening"] = "pca";
  }
  meta["whiten_dim"] = whiten_dim;
  whitening.meta() = meta;
  whitening.save(ctx.out("whitening.model"));
  io::write_embeddings(ctx.out("embeddings.wrem"), pages, meta);

  json report = {{"pages", pages.size()},
                 {"raw_dim", raw_dim},
                 {"embedding_dim", pages.front().vector.size()},
                 {"whiten_dim", whiten_dim},
                 {"whiten_fit_pages", fit_n}};
  report = ctx.stamp(report);
  io::write_json(ctx.out("encode_report.json"), report);
  return {report,
          {ctx.out("embeddings.wrem"), io::sidecar_path(ctx.out("embeddings.wrem")), ctx.out("whitening.model"),
           ctx.out("encode_report.json")}};
}

StageResult run_evaluate(const Context& ctx) {
  const PageSet pages = io::read_embeddings(ctx.in("embeddings.wrem"));
  const auto result =
      retrieval::evaluate_pages(pages, ctx.config.isolated_policy(), ctx.config.evaluate.keep_ranked);
  json report = result.to_json();
  report["isolated_policy"] = ctx.config.evaluate.isolated;
  report = ctx.stamp(report);
  io::write_json(ctx.out("eval_report.json"), report);
  io::write_text(ctx.out("eval_report.csv"), result.to_csv());
  return {report, {ctx.out("eval_report.json"), ctx.out("eval_report.csv")}};
}

json metrics(const retrieval::RetrievalReport& r) {
  return {{"mAP", r.mean_average_precision},
          {"top1", r.top1},
          {"scored_queries", r.scored_queries},
          {"isolated_queries", r.isolated_queries}};
}

StageResult run_rerank(const Context& ctx) {
  const auto& cfg = ctx.config;
  const PageSet pages = io::read_embeddings(ctx.in("embeddings.wrem"));
  const auto before = retrieval::evaluate_pages(pages, cfg.isolated_policy());
  const PageSet reranked = rerank::rerank(pages, cfg.rerank);
  const auto after = retrieval::evaluate_pages(reranked, cfg.isolated_policy());

  json report = {{"rerank", cfg.rerank.to_json()}, {"before", metrics(before)}, {"after", metrics(after)}};
  report = ctx.stamp(report);
  json meta = {{"config_hash", cfg.hash()}, {"seed", cfg.seed}, {"rerank", cfg.rerank.to_json()}};
  io::write_embeddings(ctx.out("reranked.wrem"), reranked, meta);
  io::write_json(ctx.out("rerank_report.json"), report);
  return {report,
          {ctx.out("reranked.wrem"), io::sidecar_path(ctx.out("reranked.wrem")), ctx.out("rerank_report.json")}};
}

StageResult run_sweep(const Context& ctx) {
  const auto& cfg = ctx.config;
  const auto method = rerank::method_from_string(cfg.sweep.method);
  require(!cfg.sweep.ks.empty(), "sweep: empty grid (sweep.ks)");
  if (method != rerank::Method::krnn_qe) require(!cfg.sweep.layers.empty(), "sweep: empty grid (sweep.layers)");
  if (method == rerank::Method::sgr) require(!cfg.sweep.gammas.empty(), "sweep: empty grid (sweep.gammas)");

  const PageSet pages = io::read_embeddings(ctx.in("embeddings.wrem"));
  std::ostringstream csv;
  csv.precision(17);
  csv << "method,k,layers,gamma,mAP,top1\n";
  auto row = [&](const rerank::RerankConfig& rc) {
    const auto r = retrieval::evaluate_pages(rerank::rerank(pages, rc), cfg.isolated_policy());
    std::ostringstream gamma;  // grid values print short: 0.4, not 0.40000000000000002
    gamma << rc.gamma;
    csv << rerank::to_string(rc.method) << ',' << rc.k << ',' << rc.layers << ',' << gamma.str() << ','
        << r.mean_average_precision << ',' << r.top1 << '\n';
  };
  Index rows = 0;
  for (Index k : cfg.sweep.ks) {
    rerank::RerankConfig rc = cfg.rerank;
    rc.method = method;
    rc.k = k;
    if (method == rerank::Method::krnn_qe) {
      row(rc);
      ++rows;
      continue;
    }
    for (Index layers : cfg.sweep.layers) {
      rc.layers = layers;
      if (method == rerank::Method::hard_graph) {
        rc.k2 = k;
        rc.k1 = std::max(cfg.rerank.k1, k);
        row(rc);
        ++rows;
        continue;
      }
      for (double gamma : cfg.sweep.gammas) {
        rc.gamma = gamma;
        row(rc);
        ++rows;
      }
    }
  }
  io::write_text(ctx.out("sweep.csv"), csv.str());
  json report = ctx.stamp({{"rows", rows}, {"method", cfg.sweep.method}});
  return {report, {ctx.out("sweep.csv")}};
}

StageResult run_report(const Context& ctx) {
  json summary;
  const json eval = io::read_json(ctx.in("eval_report.json"));
  summary["evaluate"] = {{"mAP", eval.at("mAP")}, {"top1", eval.at("top1")}};
  for (const char* name : {"rerank_report.json", "train_report.json", "cluster_report.json", "encode_report.json"}) {
    const fs::path p = ctx.out(name);
    if (!fs::exists(p)) continue;
    json r = io::read_json(p);
    r.erase("epochs");
    r.erase("queries");
    summary[fs::path(name).stem().string()] = r;
  }
  summary = ctx.stamp(summary);
  io::write_json(ctx.out("summary.json"), summary);
  return {summary, {ctx.out("summary.json")}};
}

}  // namespace

StageResult run_stage(Stage stage, const PipelineConfig& config) {
  static const auto order = check_stage_graph(stage_graph());
  (void)order;
  config.validate();
  const fs::path dir(config.workdir);
  WorkdirLock lock(dir);
  const Context ctx{config, stage, dir};
  switch (stage) {
    case Stage::cluster: return run_cluster(ctx);
    case Stage::train: return run_train(ctx);
    case Stage::encode: return run_encode(ctx);
    case Stage::evaluate: return run_evaluate(ctx);
    case Stage::rerank: return run_rerank(ctx);
    case Stage::sweep: return run_sweep(ctx);
    case Stage::report: return run_report(ctx);
  }
  throw std::logic_error("unhandled stage");
}

namespace {

json spread(const std::vector<double>& values) {
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double stddev = values.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  return {{"mean", mean},
          {"std", stddev},
          {"min", *std::min_element(values.begin(), values.end())},
          {"max", *std::max_element(values.begin(), values.end())},
          {"values", values}};
}

}  // namespace

json run_seeds(const PipelineConfig& config, const std::vector<std::uint64_t>& seeds) {
  require(!seeds.empty(), "report: --seeds needs at least one seed");
  config.validate();
  const fs::path root(config.workdir);
  WorkdirLock lock(root);
  std::map<std::string, std::vector<double>> series;
  json runs = json::array();
  for (std::uint64_t seed : seeds) {
    json patch = config.to_json();
    patch["seed"] = seed;
    patch["workdir"] = (root / ("seed_" + std::to_string(seed))).string();
    const PipelineConfig sub = PipelineConfig::from_json(patch);
    for (Stage s : {Stage::cluster, Stage::train, Stage::encode, Stage::evaluate}) run_stage(s, sub);
    const json rr = run_stage(Stage::rerank, sub).report;
    const double values[] = {rr["before"]["mAP"].get<double>(), rr["before"]["top1"].get<double>(),
                             rr["after"]["mAP"].get<double>(), rr["after"]["top1"].get<double>()};
    const char* names[] = {"mAP", "top1", "reranked_mAP", "reranked_top1"};
    json run = {{"seed", seed}, {"config_hash", sub.hash()}};
    for (int i = 0; i < 4; ++i) {
      series[names[i]].push_back(values[i]);
      run[names[i]] = values[i];
    }
    runs.push_back(run);
  }
  json summary = {{"seeds", seeds}, {"runs", runs}};
  for (const auto& [name, values] : series) summary[name] = spread(values);
  json base = config.to_json();
  base.erase("seed");
  base.erase("workdir");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(base.dump())));
  summary["config_hash"] = buf;
  io::write_json(root / "summary.json", summary);
  return summary;
}

}  // namespace wr::pipeline
