// compliant: command-line driver for mesh generation, data collection,
// surrogate training, control and grasp runs, and run evaluation.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "compliant/control.hpp"
#include "compliant/errors.hpp"
#include "compliant/io.hpp"
#include "compliant/learn.hpp"
#include "compliant/log.hpp"
#include "compliant/mesh.hpp"
#include "compliant/robot.hpp"

namespace fs = std::filesystem;
using namespace compliant;

namespace {

/// Flag values that parse but make no sense.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> split_numbers(const std::string& text, char sep, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(flag + ": '" + item + "' is not a number");
    }
  }
  return out;
}

Vec3 parse_vec3(const std::string& text, const std::string& flag) {
  const auto v = split_numbers(text, ',', flag);
  if (v.size() != 3) throw UsageError(flag + " expects x,y,z");
  return {v[0], v[1], v[2]};
}

std::vector<Vec3> load_goal_file(const fs::path& path) {
  const auto j = nlohmann::json::parse(read_text(path));
  std::vector<Vec3> goals;
  for (const auto& g : j.at("goals")) {
    if (!g.is_array() || g.size() != 3) throw InvalidArgument("goals file: each goal must be [x,y,z]");
    goals.emplace_back(g[0].get<double>(), g[1].get<double>(), g[2].get<double>());
  }
  return goals;
}

/// `circle:N` or a goals file. Goals move the first effector; other effectors
/// keep their position in `initial`.
std::vector<Eigen::VectorXd> resolve_goals(const std::string& spec, const RobotModel& robot,
                                           const Eigen::VectorXd& initial) {
  if (spec.rfind("circle:", 0) == 0) {
    const auto n = split_numbers(spec.substr(7), ',', "--goals");
    if (n.size() != 1 || n[0] < 0 || n[0] != std::floor(n[0]))
      throw UsageError("--goals circle:N needs a non-negative integer N");
    return circle_goals(robot, initial, int(n[0]));
  }
  std::vector<Eigen::VectorXd> out;
  for (const Vec3& g : load_goal_file(spec)) {
    Eigen::VectorXd v = initial;
    v.head<3>() = g;
    out.push_back(v);
  }
  return out;
}

ControlMode mode_flag(const std::string& text) {
  try {
    return parse_control_mode(text);
  } catch (const InvalidArgument& e) {
    throw UsageError(std::string("--mode: ") + e.what());
  }
}

std::shared_ptr<const SurrogateModel> model_for(ControlMode mode, const std::string& path) {
  if (mode == ControlMode::full) return nullptr;
  if (path.empty()) throw UsageError("--mode learned requires --model");
  return std::make_shared<SurrogateModel>(load_model(path));
}

// ---------------------------------------------------------------------------

struct MeshGenArgs {
  std::string dims, res, out;
};

void cmd_mesh_gen(const MeshGenArgs& a) {
  const Vec3 dims = parse_vec3(a.dims, "--dims");
  const auto r = split_numbers(a.res, ',', "--res");
  if (r.size() != 3) throw UsageError("--res expects i,j,k");
  for (double v : r)
    if (v < 1 || v != std::floor(v)) throw UsageError("--res entries must be integers >= 1");
  for (int i = 0; i < 3; ++i)
    if (!(dims[i] > 0)) throw UsageError("--dims entries must be > 0");
  const TetMesh mesh = build_box_mesh(dims, Eigen::Vector3i(int(r[0]), int(r[1]), int(r[2])));
  save_mesh(mesh, a.out);
  log::info("mesh-gen: wrote ", mesh.num_nodes(), " nodes and ", mesh.num_tets(), " tets to ", a.out);
}

struct CollectArgs {
  std::string robot, range, out;
  int samples = 0;
  double test_fraction = 0.25;
  std::uint64_t seed = 42;
  int jobs = 1;
};

void cmd_collect(const CollectArgs& a) {
  const auto rv = split_numbers(a.range, ':', "--range");
  if (rv.size() != 2 || !(rv[0] <= rv[1])) throw UsageError("--range expects lo:hi with lo <= hi");
  if (a.samples < 1) throw UsageError("--samples must be >= 1");
  if (a.jobs < 1) throw UsageError("--jobs must be >= 1");
  if (!(a.test_fraction >= 0)) throw UsageError("--test-fraction must be >= 0");
  const RobotModel robot = load_robot(a.robot);
  CollectOptions opts;
  opts.grid.assign(std::size_t(robot.constraints.num_actuators()), GridAxis{rv[0], rv[1], a.samples});
  opts.test_fraction = a.test_fraction;
  opts.seed = a.seed;
  opts.jobs = a.jobs;
  SampleSet set = collect(robot, opts);
  save_samples(set, a.out);
  log::info("collect: ", set.train.size(), " training and ", set.test.size(), " test samples, ",
            set.skipped.size(), " skipped");
}

struct TrainArgs {
  std::string data, out, hidden, loss_curve;
  int arch = 3;
  int epochs = 10000;
  int batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 42;
};

void cmd_train(const TrainArgs& a) {
  if (a.arch < 2) throw UsageError("--arch must be >= 2 layers");
  if (a.epochs < 0) throw UsageError("--epochs must be >= 0");
  if (a.batch < 1) throw UsageError("--batch must be >= 1");
  if (!(a.lr > 0)) throw UsageError("--lr must be > 0");
  TrainOptions opts;
  opts.layers = a.arch;
  opts.epochs = a.epochs;
  opts.batch_size = a.batch;
  opts.learning_rate = a.lr;
  opts.seed = a.seed;
  if (!a.hidden.empty()) {
    for (double w : split_numbers(a.hidden, ',', "--hidden")) {
      if (w < 1 || w != std::floor(w)) throw UsageError("--hidden widths must be integers >= 1");
      opts.hidden.push_back(int(w));
    }
  }
  const SampleSet set = load_samples(a.data);
  const TrainResult res = train(set, opts);
  save_model(res.model, a.out);
  const fs::path curve = a.loss_curve.empty() ? sidecar_path(a.out, ".loss.csv") : fs::path(a.loss_curve);
  save_loss_curve(res.curve, curve);
  log::info("train: best test loss ", res.model.best_test_loss, " at epoch ", res.model.best_epoch);
}

struct ControlArgs {
  std::string robot, mode = "full", model, goals = "circle:30", out, diagnostics;
  double tol = 0.0;
  int max_steps = 0;
  double gain = 0.5;
  double eps_reg = -1.0;
};

void write_diagnostics(const std::vector<QPDiagnostics>& d, const std::string& path) {
  if (path.empty()) return;
  std::string text;
  for (const auto& q : d) text += diagnostics_json(q) + "\n";
  write_text(path, text);
}

void cmd_control(const ControlArgs& a) {
  ControlConfig cfg;
  cfg.mode = mode_flag(a.mode);
  cfg.tol_goal = a.tol;
  cfg.gain = a.gain;
  cfg.eps_reg = a.eps_reg;
  auto robot = std::make_shared<const RobotModel>(load_robot(a.robot));
  cfg.max_steps = a.max_steps > 0 ? a.max_steps : robot->scenario.max_steps;
  ControlSession session(robot, cfg, model_for(cfg.mode, a.model));
  const auto goals = resolve_goals(a.goals, *robot, session.effector_positions());
  const Trajectory traj = run_trajectory(session, goals);
  write_csv(trajectory_table(traj, robot->constraints.num_actuators()), a.out);
  std::vector<QPDiagnostics> diag;
  for (const auto& r : traj.log)
    if (r.step > 0) diag.push_back(r.qp);
  write_diagnostics(diag, a.diagnostics);
  int reached = 0;
  for (const auto& o : traj.outcomes) reached += o.final_error <= session.tol_goal();
  log::info("control: ", reached, "/", traj.outcomes.size(), " goals within ", session.tol_goal());
}

struct GraspArgs {
  std::string robot, mode = "full", model, goal, goals, beta = "0,0,0", out, diagnostics;
  std::optional<double> mirror_x;
  double tol = 0.0;
  double prox = -1.0;
  int max_steps = 0;
};

void cmd_grasp(const GraspArgs& a) {
  GraspConfig cfg;
  cfg.control.mode = mode_flag(a.mode);
  cfg.control.tol_goal = a.tol;
  cfg.beta = parse_vec3(a.beta, "--beta");
  cfg.prox = a.prox;
  auto robot = std::make_shared<const RobotModel>(load_robot(a.robot));
  cfg.control.max_steps = a.max_steps > 0 ? a.max_steps : robot->scenario.max_steps;
  // Default placement: a gap of one finger width between the two fingers.
  const TetMesh& mesh = robot->mesh();
  const double width = mesh.bbox_max().x() - mesh.bbox_min().x();
  cfg.mirror_x = a.mirror_x ? *a.mirror_x : 2 * mesh.bbox_max().x() + width;
  GraspSession session(robot, cfg, model_for(cfg.control.mode, a.model));

  std::vector<Vec3> goals;
  if (!a.goals.empty()) goals = load_goal_file(a.goals);
  if (!a.goal.empty()) goals.push_back(parse_vec3(a.goal, "--goal"));
  if (goals.empty()) {
    // Mid-plane point slightly below the free tip, centered on the object.
    const Vec3 p = session.P1();
    goals.emplace_back(cfg.mirror_x / 2 - cfg.beta.x() / 2, p.y(), p.z() - 0.03 * robot->height());
  }
  const GraspTrajectory traj = run_grasp(session, goals);
  write_csv(grasp_table(traj, robot->constraints.num_actuators()), a.out);
  std::vector<QPDiagnostics> diag;
  for (const auto& r : traj.log)
    if (r.step > 0) diag.push_back(r.qp);
  write_diagnostics(diag, a.diagnostics);
}

struct EvaluateArgs {
  std::string full, learned, out;
};

/// Final error of every goal in a trajectory CSV (last row per goal).
std::vector<double> final_errors(const std::string& path) {
  const CsvTable t = read_csv(path);
  const auto goal = t.column("goal");
  const auto err = t.column("err_norm");
  std::map<int, double> last;
  for (const auto& row : t.rows) last[int(row[goal])] = row[err];
  std::vector<double> out;
  for (const auto& [g, e] : last) out.push_back(e);
  return out;
}

nlohmann::json error_summary(const std::vector<double>& e) {
  nlohmann::json j;
  double sum = 0.0, mx = 0.0;
  for (double v : e) {
    sum += v;
    mx = std::max(mx, v);
  }
  j["goals"] = e.size();
  j["mean_final_error"] = e.empty() ? 0.0 : sum / double(e.size());
  j["max_final_error"] = mx;
  return j;
}

void cmd_evaluate(const EvaluateArgs& a) {
  if (a.full.empty() && a.learned.empty()) throw UsageError("evaluate needs --full and/or --learned");
  nlohmann::json report;
  if (!a.full.empty()) report["full"] = error_summary(final_errors(a.full));
  if (!a.learned.empty()) report["learned"] = error_summary(final_errors(a.learned));
  if (!a.full.empty() && !a.learned.empty()) {
    const double f = report["full"]["mean_final_error"].get<double>();
    const double l = report["learned"]["mean_final_error"].get<double>();
    report["mean_error_ratio"] = f > 0 ? l / f : (l > 0 ? INFINITY : 1.0);
  }
  const std::string text = report.dump(2) + "\n";
  if (a.out.empty())
    std::cout << text;
  else
    write_text(a.out, text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Condensed-FEM modelling, learning and control of cable-driven soft robots"};
  app.require_subcommand(1);

  MeshGenArgs mg;
  auto* c_mesh = app.add_subcommand("mesh-gen", "Write a box tetrahedral mesh");
  c_mesh->add_option("--dims", mg.dims, "Extents x,y,z")->required();
  c_mesh->add_option("--res", mg.res, "Cell counts i,j,k")->required();
  c_mesh->add_option("-o,--output", mg.out, "Mesh JSON")->required();

  CollectArgs co;
  auto* c_collect = app.add_subcommand("collect", "Sample condensed states over a pull-in grid");
  c_collect->add_option("--robot", co.robot, "Robot config JSON")->required();
  c_collect->add_option("--range", co.range, "Pull-in range lo:hi, same for every cable")->required();
  c_collect->add_option("--samples", co.samples, "Grid points per cable")->required();
  c_collect->add_option("--test-fraction", co.test_fraction, "Random test points per grid point")
      ->capture_default_str();
  c_collect->add_option("--seed", co.seed, "Seed of the test-point sampler")->capture_default_str();
  c_collect->add_option("--jobs", co.jobs, "Worker threads")->capture_default_str();
  c_collect->add_option("-o,--output", co.out, "Dataset CSV")->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train the surrogate on a dataset");
  c_train->add_option("--data", tr.data, "Dataset CSV")->required();
  c_train->add_option("--arch", tr.arch, "Number of layers")->capture_default_str();
  c_train->add_option("--hidden", tr.hidden, "Hidden widths w1,w2,.. (overrides --arch)");
  c_train->add_option("--epochs", tr.epochs)->capture_default_str();
  c_train->add_option("--batch", tr.batch)->capture_default_str();
  c_train->add_option("--lr", tr.lr)->capture_default_str();
  c_train->add_option("--seed", tr.seed)->capture_default_str();
  c_train->add_option("--loss-curve", tr.loss_curve, "Loss CSV (default <output stem>.loss.csv)");
  c_train->add_option("-o,--output", tr.out, "Model JSON")->required();

  ControlArgs ct;
  auto* c_control = app.add_subcommand("control", "Drive the robot through a goal schedule");
  c_control->add_option("--robot", ct.robot, "Robot config JSON")->required();
  c_control->add_option("--mode", ct.mode, "full or learned")->capture_default_str();
  c_control->add_option("--model", ct.model, "Surrogate model JSON (learned mode)");
  c_control->add_option("--goals", ct.goals, "circle:N or goals JSON file")->capture_default_str();
  c_control->add_option("--tol", ct.tol, "Goal tolerance (default from the robot scenario)");
  c_control->add_option("--max-steps", ct.max_steps, "Steps per goal (default from the robot scenario)");
  c_control->add_option("--gain", ct.gain, "Tension update relaxation")->capture_default_str();
  c_control->add_option("--eps-reg", ct.eps_reg, "Tikhonov weight (negative: default)");
  c_control->add_option("--diagnostics", ct.diagnostics, "QP diagnostics, one JSON record per line");
  c_control->add_option("-o,--output", ct.out, "Trajectory CSV")->required();

  GraspArgs gr;
  auto* c_grasp = app.add_subcommand("grasp", "Coupled two-finger grasp");
  c_grasp->add_option("--robot", gr.robot, "Finger config JSON")->required();
  c_grasp->add_option("--mode", gr.mode, "full or learned")->capture_default_str();
  c_grasp->add_option("--model", gr.model, "Surrogate model JSON (learned mode)");
  c_grasp->add_option("--goal", gr.goal, "Goal of finger 1 effector x,y,z");
  c_grasp->add_option("--goals", gr.goals, "Goals JSON file");
  c_grasp->add_option("--beta", gr.beta, "Object offset P2 - P1")->capture_default_str();
  c_grasp->add_option("--mirror-x", gr.mirror_x, "Finger 2 = finger 1 mirrored to x -> mirror_x - x");
  c_grasp->add_option("--tol", gr.tol, "Goal tolerance (default from the robot scenario)");
  c_grasp->add_option("--max-steps", gr.max_steps, "Steps per goal");
  c_grasp->add_option("--prox", gr.prox, "Coupling-force increment penalty (negative: by mode)");
  c_grasp->add_option("--diagnostics", gr.diagnostics, "QP diagnostics, one JSON record per line");
  c_grasp->add_option("-o,--output", gr.out, "Grasp CSV")->required();

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Compare final goal errors of trajectory CSVs");
  c_eval->add_option("--full", ev.full, "Full-model trajectory CSV");
  c_eval->add_option("--learned", ev.learned, "Learned-model trajectory CSV");
  c_eval->add_option("-o,--output", ev.out, "Report JSON (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*c_mesh) cmd_mesh_gen(mg);
    if (*c_collect) cmd_collect(co);
    if (*c_train) cmd_train(tr);
    if (*c_control) cmd_control(ct);
    if (*c_grasp) cmd_grasp(gr);
    if (*c_eval) cmd_evaluate(ev);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
