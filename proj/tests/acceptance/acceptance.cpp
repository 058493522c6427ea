// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <CLI11.hpp>

#include "gradcheck.hpp"
#include "test_util.hpp"
#include "wr/aggregation.hpp"
#include "wr/config.hpp"
#include "wr/dataset.hpp"
#include "wr/encoder.hpp"
#include "wr/io.hpp"
#include "wr/pipeline.hpp"
#include "wr/rerank.hpp"
#include "wr/retrieval.hpp"

namespace fs = std::filesystem;
using namespace wr;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c, d);
  return buf;
}

// 1. Brute-force AP oracle -------------------------------------------------

double oracle_map(const PageSet& pages, Index* scored) {
  const std::size_t n = pages.size();
  double total = 0.0;
  *scored = 0;
  for (std::size_t q = 0; q < n; ++q) {
    struct Item {
      double score;
      std::string id;
      bool relevant;
    };
    std::vector<Item> items;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == q) continue;
      double dot = 0.0, nq = 0.0, nj = 0.0;
      for (Index d = 0; d < pages[q].vector.size(); ++d) {
        dot += pages[q].vector[d] * pages[j].vector[d];
        nq += pages[q].vector[d] * pages[q].vector[d];
        nj += pages[j].vector[d] * pages[j].vector[d];
      }
      items.push_back({std::clamp(dot / (std::sqrt(nq) * std::sqrt(nj)), -1.0, 1.0), pages[j].page_id,
                       pages[j].writer_id == pages[q].writer_id});
    }
    // insertion sort: descending score, then ascending id
    for (std::size_t i = 1; i < items.size(); ++i) {
      for (std::size_t k = i; k > 0; --k) {
        const auto& a = items[k - 1];
        const auto& b = items[k];
        const bool swap = b.score > a.score || (b.score == a.score && b.id < a.id);
        if (!swap) break;
        std::swap(items[k - 1], items[k]);
      }
    }
    std::vector<double> ranks;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (items[i].relevant) ranks.push_back(static_cast<double>(i + 1));
    }
    if (ranks.empty()) continue;
    double ap = 0.0;
    for (std::size_t r = 0; r < ranks.size(); ++r) ap += static_cast<double>(r + 1) / ranks[r];
    total += ap / static_cast<double>(ranks.size());
    ++*scored;
  }
  return *scored > 0 ? total / static_cast<double>(*scored) : 0.0;
}

Outcome metric_oracle() {
  Rng rng(derive_seed(1, "acceptance"));
  double worst = 0.0;
  int instances = 0;
  while (instances < 100) {
    const Index n = 2 + static_cast<Index>(rng.index(29));
    const Index writers = 1 + static_cast<Index>(rng.index(6));
    const Index dim = 2 + static_cast<Index>(rng.index(6));
    PageSet pages;
    for (Index i = 0; i < n; ++i) {
      // Occasionally repeat an earlier vector so id tie-breaking is exercised.
      Vector v = (i > 0 && rng.uniform() < 0.15) ? pages[rng.index(static_cast<std::size_t>(i))].vector
                                                  : test::random_vector(dim, rng);
      if (v.norm() == 0.0) v[0] = 1.0;
      pages.push_back({test::page_name(static_cast<Index>(rng.index(1000)) * 100 + i),
                       "w" + std::to_string(rng.index(static_cast<std::size_t>(writers))), v});
    }
    Index scored = 0;
    const double expected = oracle_map(pages, &scored);
    const auto report = retrieval::evaluate_pages(pages);
    if (report.scored_queries != scored) return {false, "scored query count differs from oracle"};
    worst = std::max(worst, std::abs(report.mean_average_precision - expected));
    ++instances;
  }
  return {worst < 1e-12, fmt("100 instances, max |mAP - oracle| = %.3g", worst)};
}

// 2. Gradient check -----------------------------------------------------------

Outcome gradient_check() {
  Rng rng(derive_seed(2, "acceptance"));
  double worst = 0.0;
  std::string worst_block;
  int checked = 0, resampled = 0;
  while (checked < 50) {
    const Index n_clusters = 1 + static_cast<Index>(rng.index(4));
    const Index dim = 1 + static_cast<Index>(rng.index(6));
    auto c = test::random_case(rng, n_clusters, dim, 1e-3);
    if (!c) {
      ++resampled;
      continue;
    }
    const auto r = test::check_gradient(*c, 1e-5);
    if (r.max_relative_error > worst) {
      worst = r.max_relative_error;
      worst_block = r.worst_block;
    }
    ++checked;
  }
  return {worst < 1e-4, fmt("50 configs (%g resampled: near a kink or no active triplet), max relative error %.3g", resampled, worst) +
                            (worst_block.empty() ? "" : " in " + worst_block)};
}

// 3. Soft assignment at high temperature equals hard VLAD ---------------------

Outcome vlad_limit() {
  Rng rng(derive_seed(3, "acceptance"));
  const double tau = 1e4;
  double worst = 0.0;
  int fixtures = 0, rejected = 0;
  while (fixtures < 20) {
    const Index k = 2 + static_cast<Index>(rng.index(5));
    const Index d = 2 + static_cast<Index>(rng.index(5));
    const Index count = 5 + static_cast<Index>(rng.index(26));
    const Matrix centers = test::random_matrix(k, d, rng);
    const Matrix xs = test::random_matrix(count, d, rng);
    // no near ties: squared-distance gap to the runner-up must be clear
    bool near_tie = false;
    for (Index i = 0; i < count && !near_tie; ++i) {
      std::vector<double> dist;
      for (Index c = 0; c < k; ++c) dist.push_back((xs.row(i) - centers.row(c)).squaredNorm());
      std::sort(dist.begin(), dist.end());
      near_tie = dist[1] - dist[0] < 1e-2;
    }
    if (near_tie) {
      ++rejected;
      continue;
    }
    // logits w_k.x + b_k = 2 c_k.x - |c_k|^2 = |x|^2 - |x - c_k|^2, scaled by tau
    encoder::Codebook cb;
    cb.mode = encoder::EncodingMode::netrvlad;
    cb.centers = centers;
    cb.assign_weights = tau * 2.0 * centers;
    cb.assign_bias = -tau * centers.rowwise().squaredNorm().transpose();
    Matrix soft = Matrix::Zero(k, d);
    for (Index i = 0; i < count; ++i) soft += encoder::encode_patch(cb, xs.row(i).transpose()).residuals;
    const Matrix hard = encoder::encode_vlad_hard(centers, xs).residuals;
    worst = std::max(worst, (soft - hard).cwiseAbs().maxCoeff());
    ++fixtures;
  }
  return {worst < 1e-3, fmt("20 fixtures (%g rejected as near ties), max L-inf gap %.3g", rejected, worst)};
}

// 4. Whitening contract -------------------------------------------------------

Outcome whitening() {
  Rng rng(derive_seed(4, "acceptance"));
  double var_err = 0.0, norm_err = 0.0;
  for (int f = 0; f < 20; ++f) {
    const Index n = 10 + static_cast<Index>(rng.index(60));
    const Index raw = 4 + static_cast<Index>(rng.index(40));
    const Index target = 1 + static_cast<Index>(rng.index(static_cast<std::size_t>(std::min(n - 1, raw))));
    Matrix m = test::random_matrix(n, raw, rng);
    for (Index c = 0; c < raw; ++c) m.col(c) *= 0.5 + static_cast<double>(rng.index(5));
    std::vector<aggregation::RawPage> pages;
    for (Index i = 0; i < n; ++i) pages.push_back({test::page_name(i), "w", m.row(i).transpose()});
    const auto result = aggregation::whiten_pages(pages, target);
    const Matrix projected = result.model.transform_rows(m);
    const Matrix centered = projected.rowwise() - projected.colwise().mean();
    for (Index c = 0; c < target; ++c) {
      var_err = std::max(var_err, std::abs(centered.col(c).squaredNorm() / static_cast<double>(n - 1) - 1.0));
    }
    for (const auto& p : result.pages) norm_err = std::max(norm_err, std::abs(p.vector.norm() - 1.0));
  }
  return {var_err <= 1e-6 && norm_err <= 1e-9,
          fmt("20 fixtures, max |variance - 1| = %.3g, max |norm - 1| = %.3g", var_err, norm_err)};
}

// 5. SGR dense oracle and permutation equivariance -----------------------------

Matrix dense_sgr(const Matrix& x, Index k, Index layers, double gamma) {
  const Index n = x.rows();
  const Matrix s = x * x.transpose();
  Matrix h = (-(1.0 - s.array()).square() / gamma).exp().matrix();
  Matrix mask = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    std::vector<Index> others;
    for (Index j = 0; j < n; ++j) {
      if (j != i) others.push_back(j);
    }
    std::stable_sort(others.begin(), others.end(), [&](Index a, Index b) { return s(i, a) > s(i, b); });
    for (Index t = 0; t < k; ++t) mask(i, others[static_cast<std::size_t>(t)]) = 1.0;
  }
  for (Index l = 0; l < layers; ++l) {
    Matrix next = h + mask.cwiseProduct(s) * h;
    for (Index i = 0; i < n; ++i) next.row(i).normalize();
    h = next;
  }
  return h;
}

Outcome sgr_oracle() {
  Rng rng(derive_seed(5, "acceptance"));
  double worst = 0.0;
  bool equivariant = true;
  for (Index n = 3; n <= 10; ++n) {
    for (int rep = 0; rep < 5; ++rep) {
      const PageSet pages = test::random_pages(n, 2 + static_cast<Index>(rng.index(6)), 3, rng);
      rerank::RerankConfig cfg;
      cfg.k = 1 + static_cast<Index>(rng.index(static_cast<std::size_t>(std::min<Index>(3, n - 1))));
      cfg.layers = 1 + static_cast<Index>(rng.index(3));
      cfg.gamma = rng.uniform(0.1, 1.0);
      const Matrix got = stack_vectors(rerank::sgr(pages, cfg));
      worst = std::max(worst, (got - dense_sgr(stack_vectors(pages), cfg.k, cfg.layers, cfg.gamma)).cwiseAbs().maxCoeff());

      std::vector<std::size_t> perm(pages.size());
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
      rng.shuffle(perm);
      PageSet permuted;
      for (auto p : perm) permuted.push_back(pages[p]);
      const auto base = retrieval::rank_all(rerank::sgr(pages, cfg));
      const auto moved = retrieval::rank_all(rerank::sgr(permuted, cfg));
      for (std::size_t i = 0; i < perm.size(); ++i) {
        const auto& a = base[perm[i]];
        const auto& b = moved[i];
        if (a.query != b.query || a.gallery != b.gallery) equivariant = false;
      }
    }
  }
  return {worst < 1e-9 && equivariant,
          fmt("40 fixtures n=3..10, max deviation %.3g, rankings under permutation ", worst) +
              (equivariant ? "identical" : "DIFFER")};
}

// 6-8. Pipeline runs -------------------------------------------------------------

struct PipelineRun {
  json eval;
  json rerank;
  std::string sweep_csv;
  double seconds = 0.0;
};

pipeline::PipelineConfig fixture_config(const fs::path& fixtures, const fs::path& manifest, const fs::path& work) {
  json patch = io::read_json(fixtures / "pipeline_acceptance.json");
  patch["manifest"] = manifest.string();
  patch["workdir"] = work.string();
  auto base = pipeline::PipelineConfig{}.to_json();
  pipeline::overlay(base, patch);
  auto cfg = pipeline::PipelineConfig::from_json(base);
  cfg.validate();
  return cfg;
}

const std::vector<pipeline::Stage> kAllStages{pipeline::Stage::cluster, pipeline::Stage::train,
                                              pipeline::Stage::encode,  pipeline::Stage::evaluate,
                                              pipeline::Stage::rerank,  pipeline::Stage::sweep,
                                              pipeline::Stage::report};

PipelineRun run_stages(const fs::path& fixtures, const fs::path& root) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = fixture_config(fixtures, root / "data" / "manifest.json", root / "work");
  PipelineRun run;
  for (const auto stage : kAllStages) {
    const auto result = pipeline::run_stage(stage, cfg);
    if (stage == pipeline::Stage::evaluate) run.eval = result.report;
    if (stage == pipeline::Stage::rerank) run.rerank = result.report;
  }
  std::ifstream in(root / "work" / "sweep.csv");
  std::stringstream buf;
  buf << in.rdbuf();
  run.sweep_csv = buf.str();
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

PipelineRun run_pipeline(const fs::path& fixtures, const std::string& spec_file, const fs::path& root) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto spec = dataset::SynthSpec::from_json(io::read_json(fixtures / spec_file));
  fs::remove_all(root);
  dataset::synth_generate(spec, root / "data");
  PipelineRun run = run_stages(fixtures, root);
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

Outcome end_to_end(const PipelineRun& run) {
  const double map = run.eval.at("mAP").get<double>();
  const double top1 = run.eval.at("top1").get<double>();
  return {map >= 0.90 && top1 >= 0.95 && run.seconds < 300.0,
          fmt("ratio 4 fixture: mAP %.4f (>= 0.90), Top-1 %.4f (>= 0.95), %.1f s", map, top1, run.seconds)};
}

Outcome sgr_behaviour(const PipelineRun& run) {
  const double baseline = run.rerank.at("before").at("mAP").get<double>();
  const double op = run.rerank.at("after").at("mAP").get<double>();
  // sweep.csv: method,k,layers,gamma,mAP,top1
  std::map<std::tuple<long, long, long>, double> at;  // (k, layers, gamma*10) -> mAP
  std::istringstream lines(run.sweep_csv);
  std::string line;
  std::getline(lines, line);
  while (std::getline(lines, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 6) continue;
    at[{std::stol(cells[1]), std::stol(cells[2]), std::lround(std::stod(cells[3]) * 10.0)}] = std::stod(cells[4]);
  }
  bool shape = true;
  std::string curve;
  for (long k : {2L, 1L}) {
    curve += fmt(" k=%g", static_cast<double>(k));
    for (long layers : {1L, 2L, 3L}) {
      auto lo = at.find({k, layers, 4});
      auto hi = at.find({k, layers, 10});
      if (lo == at.end() || hi == at.end()) return {false, "sweep is missing grid points"};
      shape = shape && hi->second < lo->second;
      curve += fmt(" L%g %.4f/%.4f", static_cast<double>(layers), lo->second, hi->second);
    }
    curve += ";";
  }
  const bool pass = op >= baseline - 0.01 && shape && run.seconds < 120.0;
  return {pass, fmt("ratio 1.5 fixture: baseline %.4f, SGR(0.4, L1, k2) %.4f, %.1f s; mAP at gamma 0.4/1.0:", baseline, op,
                    run.seconds) +
                    curve};
}

Outcome determinism(const fs::path& first, const fs::path& second) {
  std::set<std::string> files;
  for (const auto& spec : pipeline::stage_graph()) {
    for (const auto& out : spec.outputs) {
      files.insert(out);
      if (fs::path(out).extension() == ".wrem") files.insert(io::sidecar_path(out).string());
    }
  }
  std::vector<std::string> differing;
  for (const auto& f : files) {
    if (!io::files_identical(first / f, second / f)) differing.push_back(f);
  }
  std::string detail = fmt("%g stage artifacts byte-compared across two runs", static_cast<double>(files.size()));
  for (const auto& d : differing) detail += "; differs: " + d;
  return {differing.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks for the writer-retrieval engine"};
  std::string workdir = "acceptance_work";
  std::string fixtures = WR_FIXTURE_DIR;
  std::vector<int> only;
  app.add_option("--workdir", workdir, "scratch folder for the pipeline runs");
  app.add_option("--fixtures", fixtures, "folder holding the fixture specs");
  app.add_option("--only", only, "run just these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const fs::path root = fs::absolute(workdir);
  const std::set<int> wanted(only.begin(), only.end());
  auto want = [&](int n) { return wanted.empty() || wanted.count(n) > 0; };

  bool all_pass = true;
  auto report = [&](int n, const std::function<Outcome()>& check) {
    if (!want(n)) return;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    all_pass = all_pass && o.pass;
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail
              << fmt(") [%.2f s]", s) << std::endl;
  };

  report(1, [] {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o = metric_oracle();
    if (std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= 5.0) o.pass = false;
    return o;
  });
  report(2, [] {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o = gradient_check();
    if (std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= 30.0) o.pass = false;
    return o;
  });
  report(3, [] {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o = vlad_limit();
    if (std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= 5.0) o.pass = false;
    return o;
  });
  report(4, whitening);
  report(5, sgr_oracle);

  std::optional<PipelineRun> r4;
  report(6, [&] {
    r4 = run_pipeline(fixtures, "synth_r4.json", root / "r4");
    return end_to_end(*r4);
  });
  report(7, [&] { return sgr_behaviour(run_pipeline(fixtures, "synth_r15.json", root / "r15")); });
  report(8, [&] {
    // Same config and seed, same folders: every artifact must come back byte-identical.
    if (!r4) r4 = run_pipeline(fixtures, "synth_r4.json", root / "r4");
    const fs::path snapshot = root / "r4_first_run";
    fs::remove_all(snapshot);
    fs::copy(root / "r4" / "work", snapshot, fs::copy_options::recursive);
    run_stages(fixtures, root / "r4");
    return determinism(snapshot, root / "r4" / "work");
  });

  std::cout << (all_pass ? "acceptance: all selected criteria pass" : "acceptance: FAILURES above") << std::endl;
  return all_pass ? 0 : 1;
}
