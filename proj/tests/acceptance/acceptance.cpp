#include "vibus/mesh_geometry.hpp"
#include "vibus/mixture.hpp"
#include "vibus/pipeline.hpp"
#include "vibus/spectral.hpp"
#include "vibus/synthetic.hpp"
#include "vibus/transforms.hpp"

#include "test_support.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

using namespace vibus;
using namespace vibus::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Criterion 1: central differences against the analytic VB gradient.
Outcome gradient_check() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> rows(4, 64), cols(2, 32);
  std::uniform_real_distribution<double> lam(0.01, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  const double h = 1e-5;
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const int n = rows(rng), d = cols(rng);
    VBConfig cfg;
    cfg.lambda = lam(rng);
    cfg.feature_dim = d;
    Eigen::MatrixXd zp(n, d), zq(n, d);
    for (Eigen::Index i = 0; i < zp.size(); ++i) zp(i) = g(rng), zq(i) = g(rng);
    const VBLossGradient an = vb_loss_grad(zp, zq, cfg);
    auto loss = [&](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return vb_loss(cross_correlation(a, b), cfg); };
    Eigen::MatrixXd fp(n, d), fq(n, d);
    for (Eigen::Index i = 0; i < zp.size(); ++i) {
      Eigen::MatrixXd plus = zp, minus = zp;
      plus(i) += h;
      minus(i) -= h;
      fp(i) = (loss(plus, zq) - loss(minus, zq)) / (2 * h);
      plus = zq;
      minus = zq;
      plus(i) += h;
      minus(i) -= h;
      fq(i) = (loss(zp, plus) - loss(zp, minus)) / (2 * h);
    }
    const double num = std::sqrt((fp - an.grad_p).squaredNorm() + (fq - an.grad_q).squaredNorm());
    const double den = std::max(std::sqrt(fp.squaredNorm() + fq.squaredNorm()),
                                std::sqrt(an.grad_p.squaredNorm() + an.grad_q.squaredNorm()));
    worst = std::max(worst, num / std::max(den, 1e-300));
  }
  const double secs = seconds_since(t0);
  std::ostringstream s;
  s << "50 shapes, max relative error " << worst << ", " << secs << " s";
  return {worst < 1e-4 && secs < 30.0, s.str()};
}

// Criterion 2: 2000 pre-training steps on 5 synthetic scenes per seed.
Outcome pretraining_convergence() {
  const auto t0 = Clock::now();
  int passed = 0;
  std::ostringstream s;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::vector<SceneMesh> scenes;
    for (std::uint64_t k = 0; k < 5; ++k) scenes.push_back(make_three_plane_scene(seed * 100 + k, 24).mesh);
    PipelineConfig cfg;
    cfg.seed = seed;
    cfg.vb.lambda = 0.25;
    cfg.vb.feature_dim = 64;
    cfg.encoder.feature_dim = 64;
    cfg.pretrain.steps = 2000;
    cfg.pretrain.sgd.max_grad_norm = 1.0;
    const EncoderParams init = initial_encoder(cfg);
    std::vector<double> losses;
    const EncoderParams trained = pretrain_encoder(scenes, cfg, &losses);
    const double first = std::accumulate(losses.begin(), losses.begin() + 20, 0.0) / 20.0;
    const double last = std::accumulate(losses.end() - 20, losses.end(), 0.0) / 20.0;
    const SampleIndexSet probe = fps(scenes[0], cfg.vb.fps_target, 0);
    const double ld0 = logdet_covariance(encoder_forward(init, scenes[0], probe, false, 0));
    const double ld1 = logdet_covariance(encoder_forward(trained, scenes[0], probe, false, 0));
    const bool ok = last <= 0.5 * first && ld1 > ld0;
    passed += ok;
    s << "seed " << seed << ": loss " << first << " -> " << last << ", logdet " << ld0 << " -> " << ld1
      << (ok ? "" : " (miss)") << "; ";
  }
  const double secs = seconds_since(t0);
  s << passed << "/5 seeds, " << secs << " s";
  return {passed >= 4 && secs < 300.0, s.str()};
}

// Criterion 3: heat-method geodesics on a sphere, a flat grid, and against Dijkstra.
Outcome heat_geodesics_accuracy() {
  std::ostringstream s;
  bool ok = true;
  double slowest = 0.0;
  auto timed = [&](const SceneMesh& m) {
    const auto t0 = Clock::now();
    DistanceMatrix d = heat_geodesics(m);
    slowest = std::max(slowest, seconds_since(t0));
    return d;
  };

  const SceneMesh sphere = make_icosphere(4);
  const DistanceMatrix ds = timed(sphere);
  double worst_antipode = 0.0;
  for (std::size_t src = 0; src < sphere.num_vertices(); src += 97) {
    std::size_t anti = 0;
    for (std::size_t i = 0; i < sphere.num_vertices(); ++i)
      if ((sphere.vertices[i] + sphere.vertices[src]).norm() < (sphere.vertices[anti] + sphere.vertices[src]).norm())
        anti = i;
    worst_antipode = std::max(worst_antipode, std::abs(ds.values(Eigen::Index(src), Eigen::Index(anti)) - std::numbers::pi) /
                                                  std::numbers::pi);
  }
  ok &= worst_antipode <= 0.05;
  s << "icosphere(" << sphere.num_vertices() << ") antipode error " << 100 * worst_antipode << "%; ";

  const SceneMesh grid = make_grid(40, 40, 1.0 / 39.0);
  const DistanceMatrix dg = timed(grid);
  double rel_sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < grid.num_vertices(); ++i)
    for (std::size_t j = i + 1; j < grid.num_vertices(); ++j) {
      const double e = (grid.vertices[i] - grid.vertices[j]).cast<double>().norm();
      rel_sum += std::abs(dg.values(Eigen::Index(i), Eigen::Index(j)) - e) / e;
      ++pairs;
    }
  const double grid_err = rel_sum / double(pairs);
  ok &= grid_err <= 0.02;
  s << "40x40 grid mean relative error " << 100 * grid_err << "%; ";

  double worst_r = 1.0;
  for (const SceneMesh& m : {sphere, make_random_mesh(3, 30, 30), make_random_mesh(4, 40, 40, 0.4)}) {
    const DistanceMatrix heat = m.num_vertices() == sphere.num_vertices() ? ds : timed(m);
    const DistanceMatrix graph = dijkstra_geodesics(m);
    std::vector<double> a, b;
    for (Eigen::Index i = 0; i < heat.values.rows(); ++i)
      for (Eigen::Index j = i + 1; j < heat.values.cols(); ++j) a.push_back(heat.values(i, j)), b.push_back(graph.values(i, j));
    worst_r = std::min(worst_r, pearson(a, b));
  }
  ok &= worst_r >= 0.99;
  ok &= slowest < 120.0;
  s << "min Pearson vs Dijkstra " << worst_r << "; slowest mesh " << slowest << " s";
  return {ok, s.str()};
}

// Criterion 4: Lanczos against a dense symmetric eigensolver.
Outcome eigensolver_accuracy() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    Eigen::MatrixXd a(200, 200);
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = g(rng);
    a = ((a + a.transpose()) / 2.0).eval();
    const EigenPairs p = top_k_eigenvectors(a, 50);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> dense(a, Eigen::EigenvaluesOnly);
    for (Eigen::Index j = 0; j < 50; ++j) worst = std::max(worst, std::abs(p.values(j) - dense.eigenvalues()(199 - j)));
  }
  const double secs = seconds_since(t0);
  std::ostringstream s;
  s << "10 matrices, max eigenvalue error " << worst << ", " << secs << " s";
  return {worst <= 1e-8 && secs < 10.0, s.str()};
}

double rel(double got, double want) { return std::abs(got - want) / want; }

bool recovered(const MixtureModel& m, const std::array<double, 4>& truth, double w1) {
  return std::abs(m.weights[0] - w1) <= 0.03 && rel(m.components[0].a, truth[0]) <= 0.1 &&
         rel(m.components[0].b, truth[1]) <= 0.1 && rel(m.components[1].a, truth[2]) <= 0.1 &&
         rel(m.components[1].b, truth[3]) <= 0.1;
}

bool monotone(const FitDiagnostics& d) {
  for (std::size_t k = 1; k < d.log_likelihood_trace.size(); ++k)
    if (d.log_likelihood_trace[k] < d.log_likelihood_trace[k - 1] - 1e-9) return false;
  return true;
}

// Criterion 5: EM parameter recovery and monotone likelihood.
Outcome em_recovery() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(5);
  const MixtureFit gf = fit_mixture_em(gamma_mixture_samples(rng, 50000, 0.6, 2, 4, 8, 1), MixtureKind::Gamma);
  const MixtureFit bf = fit_mixture_em(beta_mixture_samples(rng, 50000, 0.6, 2, 5, 5, 2), MixtureKind::Beta,
                                        EmOptions{.iterations = 1000});
  const bool gamma_ok = recovered(gf.model, {2, 4, 8, 1}, 0.6);
  const bool beta_ok = recovered(bf.model, {2, 5, 5, 2}, 0.6);
  std::uniform_real_distribution<double> shape(0.7, 12.0), rate(0.3, 8.0), w(0.1, 0.9);
  int mono = 0;
  for (int t = 0; t < 100; ++t) {
    const MixtureFit f =
        t % 2 ? fit_mixture_em(beta_mixture_samples(rng, 2000, w(rng), shape(rng), shape(rng), shape(rng), shape(rng)),
                               MixtureKind::Beta)
              : fit_mixture_em(gamma_mixture_samples(rng, 2000, w(rng), shape(rng), rate(rng), shape(rng), rate(rng)),
                               MixtureKind::Gamma);
    mono += monotone(f.diagnostics);
  }
  const double secs = seconds_since(t0);
  std::ostringstream s;
  s << "gamma w=" << gf.model.weights[0] << " (" << gf.model.components[0].a << "," << gf.model.components[0].b
    << ")/(" << gf.model.components[1].a << "," << gf.model.components[1].b << "); beta w=" << bf.model.weights[0]
    << " (" << bf.model.components[0].a << "," << bf.model.components[0].b << ")/(" << bf.model.components[1].a << ","
    << bf.model.components[1].b << "); monotone " << mono << "/100; " << secs << " s";
  return {gamma_ok && beta_ok && mono == 100 && secs < 60.0, s.str()};
}

// Criterion 6: every component density integrates to one.
Outcome density_normalization() {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> shape(0.5, 10.0), rate(0.2, 10.0);
  boost::math::quadrature::tanh_sinh<double> unit;
  boost::math::quadrature::exp_sinh<double> half_line;
  const double inf = std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const ComponentParams g = ComponentParams::gamma(shape(rng), rate(rng));
    const ComponentParams b = ComponentParams::beta(shape(rng), shape(rng));
    const ComponentParams j = ComponentParams::joint(shape(rng), shape(rng), shape(rng), rate(rng));
    const double mg = half_line.integrate([&](double x) { return component_pdf(g, x).value; }, 0.0, inf);
    const double mb = unit.integrate([&](double x) { return component_pdf(b, x).value; }, 0.0, 1.0);
    const double mj = unit.integrate(
        [&](double u) { return half_line.integrate([&](double v) { return component_pdf(j, u, v).value; }, 0.0, inf); },
        0.0, 1.0);
    worst = std::max({worst, std::abs(mg - 1.0), std::abs(mb - 1.0), std::abs(mj - 1.0)});
  }
  std::ostringstream s;
  s << "50 draws per kind, max |mass - 1| " << worst;
  return {worst <= 1e-3, s.str()};
}

// Criterion 7: harvest precision on the synthetic label-noise field.
Outcome harvest_precision() {
  const auto t0 = Clock::now();
  const NoisyField f = make_noisy_field(7, 5, 1000, 0.7);
  bool ok = true;
  std::ostringstream s;
  for (HarvestStrategy strategy : {HarvestStrategy::Uncertainty, HarvestStrategy::Spectrum, HarvestStrategy::Joint}) {
    HarvestConfig cfg;
    cfg.strategy = strategy;
    const HarvestResult r = harvest_pseudo_labels(f.predicted, f.uncertainty, f.spectrum, {}, cfg);
    std::size_t right = 0;
    for (const PseudoLabel& p : r.labels.entries()) right += p.category == f.truth[p.vertex];
    const double precision = r.labels.empty() ? 0.0 : double(right) / double(r.labels.size());
    ok &= precision >= 0.9;
    s << to_string(strategy) << " " << precision << " (" << r.labels.size() << " kept); ";
  }
  const double secs = seconds_since(t0);
  s << secs << " s";
  return {ok && secs < 60.0, s.str()};
}

PipelineConfig toy_config(std::uint64_t seed) {
  PipelineConfig cfg;
  cfg.seed = seed;
  cfg.num_categories = 3;
  cfg.vb.lambda = 0.25;
  cfg.vb.feature_dim = 64;
  cfg.encoder.feature_dim = 64;
  cfg.pretrain.steps = 300;
  cfg.pretrain.sgd.max_grad_norm = 1.0;
  cfg.finetune.epochs = 500;
  cfg.finetune.finetune.sgd.max_grad_norm = 1.0;
  cfg.pseudo_finetune.epochs = 300;
  cfg.pseudo_finetune.finetune.sgd.max_grad_norm = 1.0;
  cfg.pseudo_finetune.finetune.class_balanced = true;
  return cfg;
}

PipelineInputs toy_inputs(std::uint64_t seed) {
  LabeledScene scene = make_three_plane_scene(seed, 16);
  scene.mesh.scene_id = "toy";
  PipelineInputs in;
  in.train.push_back({scene.mesh, sample_sparse_labels(scene.labels, 20, seed, 3)});
  in.eval.push_back({scene.mesh, scene.labels});
  return in;
}

// Criterion 8: the full pipeline on the three-plane toy scene.
Outcome toy_pipeline() {
  const auto t0 = Clock::now();
  int wins = 0;
  std::ostringstream s;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PipelineResult r = run_pipeline(toy_inputs(seed), toy_config(seed));
    const bool win = r.stage_e.miou >= r.stage_b.miou;
    wins += win;
    s << "seed " << seed << ": B " << r.stage_b.miou << " E " << r.stage_e.miou << (win ? "" : " (miss)") << "; ";
  }
  const double secs = seconds_since(t0);
  s << wins << "/5 seeds, " << secs << " s";
  return {wins >= 4 && secs < 900.0, s.str()};
}

std::map<std::string, std::string> snapshot_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_bytes(e.path());
  return files;
}

// Criterion 9: every CLI subcommand, run twice with the same seed, writes identical bytes.
Outcome cli_determinism() {
#ifndef VIBUS_CLI_PATH
  return {false, "built without the vibus CLI"};
#else
  const fs::path dir = fresh_temp_dir("cli_rerun");
  const fs::path data = dir / "data";
  fs::create_directories(data);
  LabeledScene scene = make_three_plane_scene(9, 8);
  save_scene(scene.mesh, data / "toy.ply");
  save_sparse_labels(sample_sparse_labels(scene.labels, 20, 9, 3), data / "toy.csv");
  write_dense_labels(scene.labels, data / "toy.gt.csv");
  {
    std::ofstream cfg(dir / "config.json");
    cfg << R"({"num_categories": 3, "vb": {"lambda": 0.25, "feature_dim": 32, "fps_target": 256},
               "pretrain": {"steps": 50, "max_grad_norm": 1.0},
               "finetune": {"epochs": 100, "max_grad_norm": 1.0},
               "pseudo_finetune": {"epochs": 50, "max_grad_norm": 1.0},
               "geometry": {"decimation_target": 300}})";
  }
  const std::string common = " --config \"" + (dir / "config.json").string() + "\" --seed 7 --scenes \"" +
                             data.string() + "\" --labels \"" + data.string() + "\"";
  std::map<std::string, std::string> runs[2];
  for (int k = 0; k < 2; ++k) {
    const fs::path out = dir / ("run" + std::to_string(k));
    const auto q = [&](const char* rel) { return "\"" + (out / rel).string() + "\""; };
    const std::vector<std::pair<std::string, std::string>> steps{
        {"pretrain", "pretrain --out " + q("pretrain")},
        {"finetune", "finetune --checkpoint " + q("pretrain/encoder.ckpt") + " --out " + q("finetune")},
        {"uncertainty", "uncertainty --checkpoint " + q("finetune/model.ckpt") + " --out " + q("uncertainty")},
        {"spectrum", "spectrum --out " + q("spectrum")},
        {"harvest", "harvest --checkpoint " + q("finetune/model.ckpt") + " --out " + q("harvest")},
        {"finetune_pseudo",
         "finetune --checkpoint " + q("finetune/model.ckpt") + " --pseudo " + q("harvest") + " --out " + q("refine")},
        {"evaluate", "evaluate --checkpoint " + q("refine/model.ckpt") + " --out " + q("evaluate")},
        {"pipeline", "pipeline --out " + q("pipeline")},
    };
    fs::create_directories(out / "stdout");
    for (const auto& [name, args] : steps) {
      const std::string cmd = std::string("\"") + VIBUS_CLI_PATH + "\" " + args + common + " > " +
                              q(("stdout/" + name).c_str()) + " 2>/dev/null";
      if (std::system(cmd.c_str()) != 0) return {false, "CLI " + name + " run " + std::to_string(k) + " failed"};
    }
    runs[k] = snapshot_tree(out);
  }
  std::ostringstream s;
  bool ok = runs[0] == runs[1] && runs[0].count("pipeline/stage_c/toy.pseudo.csv") == 1 &&
            runs[0].count("evaluate/metrics.json") == 1;
  std::size_t differing = 0;
  for (const auto& [name, bytes] : runs[0])
    if (!runs[1].count(name) || runs[1].at(name) != bytes) ++differing;
  s << runs[0].size() << " files compared, " << differing << " differ";
  return {ok, s.str()};
#endif
}

// Criterion 10: the published hyperparameters are the defaults.
Outcome defaults() {
  const DefaultsSnapshot d = defaults_snapshot();
  const DefaultsSnapshot expected{1024, 8000, 50, 0.6, 10, 0.5, 50};
  std::ostringstream s;
  s << "{" << d.fps_target << ", " << d.decimation_target << ", " << d.embedding_length << ", " << d.geodesic_share
    << ", " << d.dropout_passes << ", " << d.dropout_rate << ", " << d.em_iterations << "}";
  return {d == expected, s.str()};
}

const std::map<int, std::pair<const char*, std::function<Outcome()>>>& criteria() {
  static const std::map<int, std::pair<const char*, std::function<Outcome()>>> table{
      {1, {"VB gradient check", gradient_check}},
      {2, {"VB pre-training convergence", pretraining_convergence}},
      {3, {"heat geodesic accuracy", heat_geodesics_accuracy}},
      {4, {"Lanczos eigensolver accuracy", eigensolver_accuracy}},
      {5, {"EM recovery", em_recovery}},
      {6, {"density normalization", density_normalization}},
      {7, {"harvest precision", harvest_precision}},
      {8, {"toy pipeline stage E vs stage B", toy_pipeline}},
      {9, {"CLI rerun determinism", cli_determinism}},
      {10, {"defaults snapshot", defaults}},
  };
  return table;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty())
    for (const auto& [id, _] : criteria()) selected.push_back(id);

  bool all = true;
  for (int id : selected) {
    const auto it = criteria().find(id);
    if (it == criteria().end()) {
      std::cerr << "unknown criterion " << id << "\n";
      return 2;
    }
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << it->second.first << "): " << o.detail
              << std::endl;
    all &= o.pass;
  }
  return all ? 0 : 1;
}
