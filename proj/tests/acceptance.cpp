// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails. Collects and trains on the full
// sampling grids, so a run takes tens of minutes.
//
//   acceptance [work_dir] [--only N,M,..]

#include <sys/wait.h>

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "compliant/condense.hpp"
#include "compliant/control.hpp"
#include "compliant/io.hpp"
#include "compliant/learn.hpp"
#include "compliant/log.hpp"
#include "qp_oracles.hpp"
#include "support.hpp"

using namespace compliant;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool ok = true;
  std::ostringstream detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail << " [failed: " << what << "]";
    }
  }
};

fs::path g_work;

int run_cli(const std::string& args, const std::string& log) {
  const std::string cmd = "cd '" + g_work.string() + "' && '" + std::string(COMPLIANT_CLI) + "' " +
                          args + " > " + log + ".out 2> " + log + ".err";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string text_of(const std::string& name) { return read_text(g_work / name); }

double course(const RobotModel& r, int i) {
  const Interval& b = r.constraints.actuators[std::size_t(i)].delta_bounds;
  return b.hi - b.lo;
}

Eigen::VectorXd random_targets(const RobotModel& r, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(0, 1);
  const int na = r.constraints.num_actuators();
  Eigen::VectorXd t(na);
  for (int i = 0; i < na; ++i) {
    const Interval& b = r.constraints.actuators[std::size_t(i)].delta_bounds;
    t[i] = b.lo + U(rng) * (b.hi - b.lo);
  }
  return t;
}

// ---------------------------------------------------------------------------

void fem_correctness(Outcome& o) {
  Cantilever c;  // 100 x 10 x 10, 5 x 5 x 50 cells
  const auto t0 = Clock::now();
  const auto r = c.robot();
  FemSystem sys(r);
  sys.set_f_ext(c.tip_load(*r));
  solve_free(sys);
  const double secs = seconds_since(t0);
  const double tip = tip_deflection(sys, c.length);
  const double eb = c.euler_bernoulli();
  // Peak bending strain at the clamp: M c / (E I).
  const double strain = c.load * c.length * (c.side / 2) / (c.young * std::pow(c.side, 4) / 12);

  std::mt19937_64 rng(101);
  std::normal_distribution<double> N(0, 1);
  const Eigen::VectorXd x = sys.x();
  Eigen::VectorXd h(x.size());
  for (Eigen::Index i = 0; i < h.size(); ++i) h[i] = N(rng);
  h *= 1e-5 * (r->mesh().bbox_max() - r->mesh().bbox_min()).norm() / h.norm();
  const Eigen::VectorXd Kh = sys.elastic_hessian(x) * h;
  const double fd = (sys.internal_force(x + h) - sys.internal_force(x) - Kh).norm() / Kh.norm();

  o.detail << "nodes " << r->mesh().num_nodes() << ", slenderness " << c.length / c.side
           << ", strain " << strain << ", tip " << tip << " vs EB " << eb << " (rel "
           << std::abs(tip / eb - 1) << "), FD ratio " << fd << ", " << secs << " s";
  o.require(r->mesh().num_nodes() <= 2000, "mesh <= 2000 nodes");
  o.require(c.length / c.side >= 8 && strain <= 0.02, "slender beam, strain <= 2%");
  o.require(std::abs(tip / eb - 1) <= 0.2, "tip within 20%");
  o.require(fd <= 5e-3, "FD ratio <= 5e-3");
  o.require(secs < 10, "runtime < 10 s");
}

void condensation(Outcome& o) {
  double worst_asym = 0, worst_eig = std::numeric_limits<double>::infinity();
  int states = 0;
  for (const char* name : {"finger", "diamond"}) {
    const auto r = load_reference(name);
    std::mt19937_64 rng(name[0] == 'f' ? 201 : 202);
    for (int k = 0; k < 50; ++k) {
      FemSystem sys(r);
      solve_free(sys);
      solve_with_displacement(sys, random_targets(*r, rng), true);
      const Eigen::MatrixXd W = condense(sys).W;
      worst_asym = std::max(worst_asym, (W - W.transpose()).norm() / W.norm());
      const Eigen::MatrixXd S = (W + W.transpose()) / 2;
      const double lmin = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(S).eigenvalues().minCoeff();
      worst_eig = std::min(worst_eig, lmin / W.norm());
      ++states;
    }
  }
  SeriesChain chain;
  FemSystem cs(chain.robot());
  solve_free(cs);
  const double waa = condense(cs).W(0, 0);
  const double chain_err = std::abs(waa / chain.oracle() - 1);

  chain.cells = 20;
  FemSystem c1(chain.robot(1)), c2(chain.robot(2));
  solve_free(c1);
  solve_free(c2);
  auto j = nlohmann::json::parse(read_text(config_path("finger.json")));
  for (auto& v : j["mesh"]["box"]["res"]) v = v.get<int>() * 2;
  FemSystem f1(load_reference("finger")),
      f2(std::make_shared<const RobotModel>(robot_from_json_text(j.dump())));
  solve_free(f1);
  solve_free(f2);
  const auto W1 = condense(c1).W, W2 = condense(c2).W, F1 = condense(f1).W, F2 = condense(f2).W;
  const bool dims = W1.rows() == W2.rows() && F1.rows() == F2.rows() && F1.cols() == F2.cols();

  o.detail << states << " equilibria, max asymmetry " << worst_asym << ", min eigenvalue/|W| "
           << worst_eig << ", chain W_aa " << waa << " vs " << chain.oracle() << " (rel " << chain_err
           << "), refined dims " << F1.rows() << " -> " << F2.rows();
  o.require(worst_asym <= 1e-8, "symmetry");
  o.require(worst_eig >= -1e-9, "PSD");
  o.require(chain_err <= 0.05, "chain within 5%");
  o.require(dims, "dimension invariant");
}

void direct_jacobian_check(Outcome& o) {
  NewtonOptions tight;
  tight.tol = 1e-9;
  double worst = 0;
  int configs = 0;
  for (const char* name : {"finger", "diamond"}) {
    const auto r = load_reference(name);
    const int na = r->constraints.num_actuators();
    std::mt19937_64 rng(name[0] == 'f' ? 301 : 302);
    std::normal_distribution<double> N(0, 1);
    for (int k = 0; k < 20; ++k) {
      FemSystem base(r);
      solve_free(base);
      solve_with_displacement(base, random_targets(*r, rng), true, tight);
      const CondensedState st = condense(base);
      const Eigen::MatrixXd J = direct_jacobian(st).J;
      Eigen::VectorXd dir(na);
      for (int i = 0; i < na; ++i) dir[i] = N(rng);
      dir /= dir.cwiseAbs().maxCoeff();
      Eigen::VectorXd step(na);
      for (int i = 0; i < na; ++i) step[i] = 0.01 * course(*r, i) * dir[i];

      const Eigen::VectorXd e0 = r->constraints.effector_positions(base.nodes());
      FemSystem moved(r);
      moved.set_x(base.x());
      moved.set_lambda(base.lambda());
      solve_with_displacement(moved, st.delta_a + step, false, tight);
      const Eigen::VectorXd de = r->constraints.effector_positions(moved.nodes()) - e0;
      const Eigen::VectorXd pred = J * step;
      worst = std::max(worst, (de - pred).norm() / de.norm());
      ++configs;
    }
  }
  o.detail << configs << " configurations, steps 1% of course, worst relative error " << worst;
  o.require(configs == 40, "20 configurations per robot");
  o.require(worst <= 0.05, "within 5%");
}

/// KKT residuals of a returned certificate, evaluated here from the problem
/// data: stationarity, feasibility, multiplier sign and complementarity.
double independent_kkt(const InverseProblem<double>& ip, const InverseSolution<double>& s) {
  const QPProblem<double> p = to_qp(ip);
  const Eigen::Index n = p.H.rows();
  const Eigen::VectorXd& z = s.qp.z;
  Eigen::VectorXd grad = p.H * z + p.g;
  const double fscale = 1 + p.g.norm() + p.H.norm() * z.norm();
  const double dscale = 1 + z.lpNorm<Eigen::Infinity>();
  double comp = 0;
  for (std::size_t k = 0; k < s.qp.active_set.size(); ++k) {
    const int id = s.qp.active_set[k];
    const double mu = s.qp.multipliers[Eigen::Index(k)];
    if (mu < 0) return std::numeric_limits<double>::infinity();
    const bool upper = id % 2 == 1;
    const int idx = id / 2;
    Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
    double slack;
    if (idx < n) {
      a[idx] = 1;
      slack = upper ? p.ub[idx] - z[idx] : z[idx] - p.lb[idx];
    } else {
      const Eigen::Index row = idx - n;
      a = p.A.row(row).transpose();
      const double v = a.dot(z);
      slack = upper ? p.ubA[row] - v : v - p.lbA[row];
    }
    grad += upper ? Eigen::VectorXd(mu * a) : Eigen::VectorXd(-mu * a);
    comp = std::max(comp, std::abs(mu * slack) / (fscale * dscale));
  }
  double primal = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    primal = std::max({primal, p.lb[i] - z[i], z[i] - p.ub[i]});
  if (p.A.rows() > 0) {
    const Eigen::VectorXd v = p.A * z;
    for (Eigen::Index r = 0; r < v.size(); ++r)
      primal = std::max({primal, p.lbA[r] - v[r], v[r] - p.ubA[r]});
  }
  return std::max({grad.norm() / fscale, primal / dscale, comp});
}

void qp_check(Outcome& o) {
  std::mt19937_64 rng(401);
  double worst_kkt = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto ip = random_inverse(1 + k % 8, rng, k % 2 == 0);
    worst_kkt = std::max(worst_kkt, independent_kkt(ip, solve_inverse(ip)));
  }

  // Grid oracle: spacing chosen so each instance enumerates about a million
  // nodes.
  std::mt19937_64 grid_rng(402);
  const double width[] = {0, 2.0, 0.5, 0.1};
  const double spacing[] = {0, 2e-6, 5e-4, 1e-3};
  double worst_gap = 0;  // (grid - qp) / resolution bound, box-only instances
  double worst_below = 0;  // qp - grid, all instances; must not be positive
  for (int k = 0; k < 100; ++k) {
    const int na = 1 + k % 3;
    const bool with_course = k % 4 == 3;
    auto ip = random_inverse(na, grid_rng, false);
    ip.lambda_hi = Eigen::VectorXd::Constant(na, width[na]);
    ip.delta_e_free *= width[na];
    if (with_course) {
      const Eigen::VectorXd a = ip.delta_a_free + ip.W_aa * ip.lambda_hi * 0.2;
      const Eigen::VectorXd b = ip.delta_a_free + ip.W_aa * ip.lambda_hi * 0.7;
      ip.delta_lo = a.cwiseMin(b);
      ip.delta_hi = a.cwiseMax(b);
    }
    const auto s = solve_inverse(ip);
    const double qp = inverse_objective(ip, s.lambda);
    const GridResult g = grid_search(ip, spacing[na]);
    if (g.points == 0) {
      o.require(false, "grid instance without feasible nodes");
      continue;
    }
    worst_below = std::max(worst_below, qp - g.best);
    if (!with_course)
      worst_gap = std::max(worst_gap, (g.best - qp) / (grid_error_bound(ip, s.lambda, spacing[na]) + 1e-12));
  }

  // One cable whose free motion already overshoots the goal on the side it
  // cannot push toward.
  InverseProblem<double> one;
  one.W_ea = Eigen::MatrixXd::Zero(3, 1);
  one.W_ea(0, 0) = 1;
  one.W_aa = Eigen::MatrixXd::Constant(1, 1, 1);
  one.delta_e_free = Eigen::Vector3d(3, 0, 0);
  one.delta_a_free = Eigen::VectorXd::Zero(1);
  one.lambda_lo = Eigen::VectorXd::Zero(1);
  one.lambda_hi = Eigen::VectorXd::Constant(1, 10);
  one.delta_lo = Eigen::VectorXd::Constant(1, -std::numeric_limits<double>::infinity());
  one.delta_hi = Eigen::VectorXd::Constant(1, std::numeric_limits<double>::infinity());
  one.eps_reg = 0;
  const auto b = solve_inverse(one);
  const bool boundary = b.lambda[0] == 0.0 && b.qp.active_set == std::vector<int>{bound_id(0, false)};

  o.detail << "1000 instances worst KKT " << worst_kkt << "; 100 grid instances: qp above grid by at most "
           << worst_below << ", grid gap / resolution bound <= " << worst_gap
           << "; unilateral boundary lambda " << b.lambda[0];
  o.require(worst_kkt <= 1e-8, "KKT <= 1e-8");
  o.require(worst_below <= 1e-12, "qp never worse than a grid node");
  o.require(worst_gap <= 1.0, "grid within resolution");
  o.require(boundary, "boundary solution");
}

// Models trained in criterion 5, used again by 7 and 8.
struct Trained {
  std::shared_ptr<const SurrogateModel> finger, diamond;
};
Trained g_models;

void learning(Outcome& o) {
  // Gradient check on a fixed tiny network.
  std::mt19937_64 rng(501);
  Mlp<double> net = Mlp<double>::random({3, 5, 4, 2}, rng);
  for (auto& l : net.layers) l.b = Eigen::VectorXd::Constant(l.b.size(), 0.1);
  Eigen::MatrixXd x(3, 6), y(2, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = std::sin(1.7 * double(i) + 0.3);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = std::cos(0.9 * double(i));
  std::vector<DenseLayer<double>> grad;
  net.loss(x, y, &grad);
  double worst_grad = 0;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    auto probe = [&](double& p, double analytic) {
      const double keep = p, h = 1e-6;
      p = keep + h;
      const double lp = net.loss(x, y);
      p = keep - h;
      const double lm = net.loss(x, y);
      p = keep;
      const double fd = (lp - lm) / (2 * h);
      worst_grad = std::max(worst_grad, std::abs(fd - analytic) / std::max(1e-3, std::abs(fd)));
    };
    auto& l = net.layers[k];
    for (Eigen::Index i = 0; i < l.w.size(); ++i) probe(l.w.data()[i], grad[k].w.data()[i]);
    for (Eigen::Index i = 0; i < l.b.size(); ++i) probe(l.b[i], grad[k].b[i]);
  }
  o.detail << "gradient check " << worst_grad;
  o.require(worst_grad <= 1e-5, "gradient <= 1e-5");

  struct Job {
    std::string robot, range;
    int samples;
  };
  double train_total = 0;
  for (const Job& j : {Job{"finger", "0:20", 81}, Job{"diamond", "0:30", 11}}) {
    const std::string cfg = config_path(j.robot + ".json").string();
    auto t0 = Clock::now();
    const int rc = run_cli("collect --robot '" + cfg + "' --range " + j.range + " --samples " +
                               std::to_string(j.samples) + " --seed 42 -o " + j.robot + ".csv",
                           j.robot + "_collect");
    const double collect_s = seconds_since(t0);
    o.require(rc == 0, j.robot + " collect");
    if (rc != 0) return;
    t0 = Clock::now();
    const int rt = run_cli("train --data " + j.robot + ".csv --seed 42 -o " + j.robot + ".model.json",
                           j.robot + "_train");
    const double train_s = seconds_since(t0);
    train_total += train_s;
    o.require(rt == 0, j.robot + " train");
    if (rt != 0) return;
    const auto model = std::make_shared<const SurrogateModel>(load_model(g_work / (j.robot + ".model.json")));
    const SampleSet set = load_samples(g_work / (j.robot + ".csv"));
    o.detail << "; " << j.robot << ": " << set.train.size() << " train / " << set.test.size()
             << " test samples, " << set.skipped.size() << " skipped, collect " << collect_s
             << " s, train " << train_s << " s, test loss " << model->best_test_loss;
    o.require(model->best_test_loss <= 1e-2, j.robot + " test loss <= 1e-2");
    (j.robot == "finger" ? g_models.finger : g_models.diamond) = model;
  }

  // Same seed, same bytes.
  const int again = run_cli("train --data finger.csv --seed 42 -o finger_again.model.json", "finger_again");
  const bool same = again == 0 && text_of("finger.model.json") == text_of("finger_again.model.json") &&
                    text_of("finger.model.loss.csv") == text_of("finger_again.model.loss.csv");
  o.detail << "; retrain identical: " << (same ? "yes" : "no") << "; total train " << train_total << " s";
  o.require(same, "deterministic training");
  o.require(train_total < 600, "total train < 10 min");
}

struct ControlResult {
  std::vector<double> final_errors;
  double mean = 0, max = 0;
  int max_steps = 0;
  bool all_converged = true;
  double seconds = 0;
};

ControlResult circle_run(ControlMode mode, std::shared_ptr<const SurrogateModel> model) {
  const auto r = load_reference("diamond");
  ControlConfig cfg;
  cfg.mode = mode;
  cfg.max_steps = 50;
  const auto t0 = Clock::now();
  ControlSession s(r, cfg, std::move(model));
  const auto goals = circle_goals(*r, s.effector_positions(), 30);
  const Trajectory t = run_trajectory(s, goals);
  ControlResult out;
  out.seconds = seconds_since(t0);
  for (const auto& g : t.outcomes) {
    out.final_errors.push_back(g.final_error);
    out.mean += g.final_error / double(t.outcomes.size());
    out.max = std::max(out.max, g.final_error);
    out.max_steps = std::max(out.max_steps, g.steps);
    out.all_converged = out.all_converged && g.final_error <= s.tol_goal();
  }
  return out;
}

ControlResult g_full;

void full_control(Outcome& o) {
  const auto r = load_reference("diamond");
  const double tol = r->scenario.tol_goal_fraction * r->height();
  g_full = circle_run(ControlMode::full, nullptr);
  o.detail << g_full.final_errors.size() << " goals, radius " << r->scenario.circle_radius_fraction * r->height()
           << ", max error " << g_full.max << " (tol " << tol << "), mean " << g_full.mean
           << ", max steps " << g_full.max_steps << ", " << g_full.seconds << " s";
  o.require(g_full.final_errors.size() == 30, "30 goals");
  o.require(g_full.all_converged && g_full.max <= tol, "every goal within tol");
  o.require(g_full.max_steps <= 50, "<= 50 steps");
  o.require(g_full.seconds < 300, "< 5 min");
}

void learned_control(Outcome& o) {
  if (!g_models.diamond) {
    o.require(false, "needs the diamond model from criterion 5");
    return;
  }
  if (g_full.final_errors.empty()) g_full = circle_run(ControlMode::full, nullptr);
  const auto r = load_reference("diamond");
  const ControlResult l = circle_run(ControlMode::learned, g_models.diamond);
  const double ratio = l.mean / g_full.mean;
  o.detail << "learned mean " << l.mean << " vs full " << g_full.mean << " (ratio " << ratio
           << "), learned max " << l.max << " (limit " << 0.05 * r->height() << "), " << l.seconds << " s";
  o.require(l.final_errors.size() == 30, "30 goals");
  o.require(ratio <= 3, "mean <= 3x full");
  o.require(l.max <= 0.05 * r->height(), "max <= 5% of height");
}

/// Runs goals in order; every converged goal must hold the gap.
struct GraspCheck {
  bool converged = true;
  double worst_err = 0, worst_gap = 0, worst_tension_split = 0;
  int steps = 0;
  Eigen::VectorXd last_l1, last_l2;
};

GraspCheck grasp_run(ControlMode mode, const Vec3& beta, const std::function<std::vector<Vec3>(const Vec3&)>& goals_of,
                     bool symmetric) {
  const auto r = load_reference("finger");
  GraspConfig cfg;
  cfg.mirror_x = 30;
  cfg.beta = beta;
  cfg.control.mode = mode;
  cfg.control.max_steps = 50;
  GraspSession g(r, cfg, mode == ControlMode::learned ? g_models.finger : nullptr);
  GraspCheck c;
  const auto goals = goals_of(g.P1());
  std::vector<GraspRecord> log;
  for (std::size_t k = 0; k < goals.size(); ++k) {
    const GraspOutcome out = g.run_goal(goals[k], int(k), log);
    c.steps += out.steps;
    c.converged = c.converged && out.converged && out.final_error <= g.tol_goal();
    c.worst_err = std::max(c.worst_err, out.final_error);
    c.worst_gap = std::max(c.worst_gap, out.final_gap);
    const auto& last = log.back();
    if (symmetric)
      c.worst_tension_split = std::max(c.worst_tension_split, (last.lambda1 - last.lambda2).lpNorm<Eigen::Infinity>());
    c.last_l1 = last.lambda1;
    c.last_l2 = last.lambda2;
  }
  return c;
}

void grasp(Outcome& o) {
  if (!g_models.finger) {
    o.require(false, "needs the finger model from criterion 5");
    return;
  }
  const double tol = load_reference("finger")->scenario.tol_goal_fraction * load_reference("finger")->height();
  auto below = [](double dz) {
    return [dz](const Vec3& p) { return std::vector<Vec3>{Vec3(15, p.y(), p.z() - dz)}; };
  };
  // Symmetric placement with the learned finger.
  const GraspCheck sym = grasp_run(ControlMode::learned, Vec3::Zero(), below(2), true);
  // Object carried sideways along the mirror plane, learned and full.
  auto lateral = [](const Vec3& p) {
    return std::vector<Vec3>{Vec3(15, p.y(), p.z() - 2), Vec3(15, p.y() + 2, p.z() - 2),
                             Vec3(15, p.y() - 2, p.z() - 2), Vec3(15, p.y(), p.z() - 2.5)};
  };
  const GraspCheck lat = grasp_run(ControlMode::learned, Vec3::Zero(), lateral, true);
  const GraspCheck lat_full = grasp_run(ControlMode::full, Vec3::Zero(), lateral, true);
  const double agree = (lat.last_l1 - lat_full.last_l1).norm() / lat_full.last_l1.norm();
  // Object of width 3 held off the mirror plane, full model.
  const GraspCheck off = grasp_run(ControlMode::full, Vec3(3, 0, 0), [](const Vec3& p) {
    return std::vector<Vec3>{Vec3(13, p.y(), p.z() - 2.5)};
  }, false);

  o.detail << "tol " << tol << "; learned symmetric: " << sym.steps << " steps, err " << sym.worst_err
           << ", gap " << sym.worst_gap << ", |l1 - l2| " << sym.worst_tension_split
           << "; learned lateral (4 goals): " << lat.steps << " steps, max err " << lat.worst_err
           << ", max gap " << lat.worst_gap << ", |l1 - l2| " << lat.worst_tension_split
           << ", final tensions vs full " << agree << "; full beta=(3,0,0): " << off.steps << " steps, err "
           << off.worst_err << ", gap " << off.worst_gap;
  for (const auto* c : {&sym, &lat, &lat_full, &off}) {
    o.require(c->converged && c->worst_err <= tol, "goal reached");
    o.require(c->worst_gap <= 1e-6, "gap <= 1e-6");
  }
  o.require(sym.worst_tension_split <= 1e-6 && lat.worst_tension_split <= 1e-6, "symmetric tensions");
}

void determinism(Outcome& o) {
  const std::string f = config_path("finger.json").string();
  const std::vector<std::pair<std::string, std::vector<std::string>>> commands = {
      {"mesh-gen --dims 10,10,60 --res 2,2,12 -o {}mesh.json", {"mesh.json"}},
      {"collect --robot '" + f + "' --range 0:20 --samples 5 --seed 7 -o {}d.csv",
       {"d.csv", "d.test.csv", "d.meta.json"}},
      {"train --data det_a_d.csv --epochs 200 --batch 8 --seed 7 -o {}m.json", {"m.json", "m.loss.csv"}},
      {"control --robot '" + f + "' --goals circle:4 --diagnostics {}diag.jsonl -o {}full.csv",
       {"full.csv", "diag.jsonl"}},
      {"control --robot '" + f + "' --mode learned --model det_a_m.json --goals circle:4 -o {}learned.csv",
       {"learned.csv"}},
      {"grasp --robot '" + f + "' --mirror-x 30 -o {}grasp.csv", {"grasp.csv"}},
      {"grasp --robot '" + f + "' --mirror-x 30 --mode learned --model det_a_m.json -o {}grasp_l.csv",
       {"grasp_l.csv"}},
      {"evaluate --full det_a_full.csv --learned det_a_learned.csv -o {}eval.json", {"eval.json"}},
  };
  int files = 0;
  for (const auto& [pattern, outputs] : commands) {
    for (const std::string prefix : {"det_a_", "det_b_"}) {
      std::string cmd = pattern;
      for (std::size_t p; (p = cmd.find("{}")) != std::string::npos;) cmd.replace(p, 2, prefix);
      const int rc = run_cli(cmd, prefix + "cmd");
      o.require(rc == 0, cmd);
      if (rc != 0) return;
    }
    for (const auto& out : outputs) {
      const std::string a = text_of("det_a_" + out);
      o.require(!a.empty() && a == text_of("det_b_" + out), out + " identical");
      ++files;
    }
  }
  o.detail << commands.size() << " commands run twice, " << files << " output files compared";
}

}  // namespace

int main(int argc, char** argv) {
  g_work = fs::temp_directory_path() / "compliant_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
    } else {
      g_work = a;
    }
  }
  fs::create_directories(g_work);
  compliant::log::set_threshold(compliant::log::Level::error);

  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"FEM correctness", fem_correctness},
      {"condensation", condensation},
      {"direct Jacobian", direct_jacobian_check},
      {"QP", qp_check},
      {"learning", learning},
      {"full-model control", full_control},
      {"learned-model control", learned_control},
      {"grasp", grasp},
      {"CLI determinism", determinism},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int n = int(k) + 1;
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      criteria[k].second(o);
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail << " [error: " << e.what() << "]";
    }
    failed += !o.ok;
    std::printf("%s %d %s: %s (%.1f s)\n", o.ok ? "PASS" : "FAIL", n, criteria[k].first.c_str(),
                o.detail.str().c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
