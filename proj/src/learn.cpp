#include "compliant/learn.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <cmath>
#include <numeric>
#include <optional>
#include <thread>

#include <json.hpp>

#include "compliant/errors.hpp"
#include "compliant/io.hpp"
#include "compliant/log.hpp"

namespace compliant {

using json = nlohmann::json;

namespace {

std::string vec_text(const Eigen::VectorXd& v) {
  std::string s = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += format_double(v[i]);
  }
  return s + "]";
}

json to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}

/// Runs fn(i) for i in [0, n) on `jobs` threads; each index is processed
/// exactly once and results are written by index.
template <typename Fn>
void parallel_for(int n, int jobs, Fn&& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (int t = 0; t < jobs; ++t)
    pool.emplace_back([&]() {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

Sample sample_from_state(const CondensedState& state) {
  return {state.delta_a, upper_triangle(state.W), state.delta_a_free};
}

Sample sample_at(FemSystem& sys, const Eigen::VectorXd& target, const NewtonOptions& opts) {
  solve_with_displacement(sys, target, true, opts);
  return sample_from_state(condense(sys));
}

SampleSet collect(const RobotModel& robot, const CollectOptions& opts) {
  const int na = robot.constraints.num_actuators();
  if (na == 0) throw InvalidArgument("collect: robot has no cables");
  if (int(opts.grid.size()) != na)
    throw InvalidArgument("collect: grid has " + std::to_string(opts.grid.size()) +
                          " axes for " + std::to_string(na) + " cables");
  for (const auto& ax : opts.grid)
    if (ax.samples < 1 || !(ax.lo <= ax.hi) || !std::isfinite(ax.lo) || !std::isfinite(ax.hi))
      throw InvalidArgument("collect: each grid axis needs lo <= hi and samples >= 1");
  if (!(opts.test_fraction >= 0)) throw InvalidArgument("collect: test fraction must be >= 0");

  auto model = std::make_shared<const RobotModel>(robot);
  FemSystem base(model);
  solve_free(base, opts.newton);
  const Eigen::VectorXd base_x = base.x();

  SampleSet set;
  set.robot = robot.name;
  set.hidden_hint = robot.surrogate_hidden;
  set.num_actuators = na;
  set.num_effector_rows = robot.constraints.num_effector_rows();
  set.grid = opts.grid;
  set.seed = opts.seed;
  {
    const Sample a = sample_from_state(condense(base));
    set.anchor = {a.delta_a, a.W_tri, a.delta_a_free};
  }

  // Grid lines along the last cable share warm starts; lines are independent.
  const int n_last = opts.grid.back().samples;
  int n_lines = 1;
  for (int i = 0; i + 1 < na; ++i) n_lines *= opts.grid[std::size_t(i)].samples;
  const int n_grid = n_lines * n_last;

  auto grid_target = [&](int index) {
    Eigen::VectorXd t(na);
    for (int i = na - 1; i >= 0; --i) {
      const auto& ax = opts.grid[std::size_t(i)];
      t[i] = ax.value(index % ax.samples);
      index /= ax.samples;
    }
    return t;
  };

  std::vector<std::optional<Sample>> grid_out(static_cast<std::size_t>(n_grid));
  parallel_for(n_lines, opts.jobs, [&](int line) {
    FemSystem sys(model);
    sys.set_x(base_x);
    for (int k = 0; k < n_last; ++k) {
      const int idx = line * n_last + k;
      const Eigen::VectorXd target = grid_target(idx);
      try {
        grid_out[std::size_t(idx)] = sample_at(sys, target, opts.newton);
      } catch (const Error& e) {
        log::warn("collect: skipping pull-in ", vec_text(target), ": ", e.what());
        sys.set_x(base_x);
        sys.set_lambda(Eigen::VectorXd::Zero(na));
      }
    }
  });

  const int n_test = n_grid == 0 ? 0 : std::max(1, int(std::lround(opts.test_fraction * n_grid)));
  std::vector<Eigen::VectorXd> test_targets;
  {
    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int s = 0; s < n_test; ++s) {
      Eigen::VectorXd t(na);
      for (int i = 0; i < na; ++i) {
        const auto& ax = opts.grid[std::size_t(i)];
        t[i] = ax.lo + (ax.hi - ax.lo) * unit(rng);
      }
      test_targets.push_back(t);
    }
  }
  std::vector<std::optional<Sample>> test_out(static_cast<std::size_t>(n_test));
  parallel_for(n_test, opts.jobs, [&](int s) {
    FemSystem sys(model);
    sys.set_x(base_x);
    try {
      test_out[std::size_t(s)] = sample_at(sys, test_targets[std::size_t(s)], opts.newton);
    } catch (const Error& e) {
      log::warn("collect: skipping test pull-in ", vec_text(test_targets[std::size_t(s)]), ": ",
                e.what());
    }
  });

  for (int i = 0; i < n_grid; ++i) {
    if (grid_out[std::size_t(i)])
      set.train.push_back(std::move(*grid_out[std::size_t(i)]));
    else
      set.skipped.push_back(grid_target(i));
  }
  for (int s = 0; s < n_test; ++s) {
    if (test_out[std::size_t(s)])
      set.test.push_back(std::move(*test_out[std::size_t(s)]));
    else
      set.skipped.push_back(test_targets[std::size_t(s)]);
  }
  if (set.train.empty()) throw Error("collect: every grid point failed to solve");
  log::info("collect: ", set.train.size(), " training and ", set.test.size(), " test samples, ",
            set.skipped.size(), " skipped");
  return set;
}

// ---------------------------------------------------------------------------

std::filesystem::path sidecar_path(const std::filesystem::path& path, const std::string& suffix) {
  auto p = path;
  p.replace_extension();
  p += suffix;
  return p;
}

namespace {

CsvTable samples_table(const std::vector<Sample>& samples, int na, int ntri) {
  CsvTable t;
  for (int i = 0; i < na; ++i) t.header.push_back("delta_a_" + std::to_string(i));
  for (int i = 0; i < ntri; ++i) t.header.push_back("W_tri_" + std::to_string(i));
  for (int i = 0; i < na; ++i) t.header.push_back("delta_a_free_" + std::to_string(i));
  for (const auto& s : samples) {
    std::vector<double> row;
    row.reserve(t.header.size());
    row.insert(row.end(), s.delta_a.data(), s.delta_a.data() + na);
    row.insert(row.end(), s.W_tri.data(), s.W_tri.data() + ntri);
    row.insert(row.end(), s.delta_a_free.data(), s.delta_a_free.data() + na);
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::vector<Sample> samples_from_table(const CsvTable& t, int na, int ntri) {
  if (int(t.header.size()) != 2 * na + ntri)
    throw InvalidArgument("dataset: expected " + std::to_string(2 * na + ntri) + " columns");
  const std::size_t a0 = t.column("delta_a_0");
  const std::size_t w0 = t.column("W_tri_0");
  const std::size_t f0 = t.column("delta_a_free_0");
  std::vector<Sample> out;
  for (const auto& row : t.rows) {
    Sample s;
    s.delta_a = Eigen::Map<const Eigen::VectorXd>(row.data() + a0, na);
    s.W_tri = Eigen::Map<const Eigen::VectorXd>(row.data() + w0, ntri);
    s.delta_a_free = Eigen::Map<const Eigen::VectorXd>(row.data() + f0, na);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

void save_samples(const SampleSet& set, const std::filesystem::path& path) {
  const int ntri = triangle_size(set.num_rows());
  write_csv(samples_table(set.train, set.num_actuators, ntri), path);
  write_csv(samples_table(set.test, set.num_actuators, ntri), sidecar_path(path, ".test.csv"));

  json meta;
  meta["robot"] = set.robot;
  meta["num_actuators"] = set.num_actuators;
  meta["num_effector_rows"] = set.num_effector_rows;
  meta["delta_convention"] = "pull_in = rest_length - current_length";
  meta["W_order"] = "effector rows then actuator rows; W_tri is the row-major upper triangle";
  meta["anchor"] = {{"delta_a", to_json(set.anchor.delta_a)},
                    {"W_tri", to_json(set.anchor.W_tri)},
                    {"delta_a_free", to_json(set.anchor.delta_a_free)}};
  json grid = json::array();
  for (const auto& ax : set.grid) grid.push_back({{"lo", ax.lo}, {"hi", ax.hi}, {"samples", ax.samples}});
  meta["grid"] = grid;
  meta["seed"] = set.seed;
  if (!set.hidden_hint.empty()) meta["surrogate_hidden"] = set.hidden_hint;
  meta["train_rows"] = set.train.size();
  meta["test_rows"] = set.test.size();
  json skipped = json::array();
  for (const auto& s : set.skipped) skipped.push_back(to_json(s));
  meta["skipped"] = skipped;
  write_text(sidecar_path(path, ".meta.json"), meta.dump(2) + "\n");
}

SampleSet load_samples(const std::filesystem::path& path) {
  json meta;
  try {
    meta = json::parse(read_text(sidecar_path(path, ".meta.json")));
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("dataset: bad metadata: ") + e.what());
  }
  try {
    SampleSet set;
    set.robot = meta.value("robot", "");
    set.num_actuators = meta.at("num_actuators").get<int>();
    set.num_effector_rows = meta.at("num_effector_rows").get<int>();
    set.seed = meta.value("seed", std::uint64_t(0));
    set.hidden_hint = meta.value("surrogate_hidden", std::vector<int>{});
    const auto& a = meta.at("anchor");
    set.anchor = {vec_from_json(a.at("delta_a")), vec_from_json(a.at("W_tri")),
                  vec_from_json(a.at("delta_a_free"))};
    for (const auto& ax : meta.at("grid"))
      set.grid.push_back({ax.at("lo").get<double>(), ax.at("hi").get<double>(),
                          ax.at("samples").get<int>()});
    for (const auto& s : meta.value("skipped", json::array())) set.skipped.push_back(vec_from_json(s));
    const int ntri = triangle_size(set.num_rows());
    if (set.anchor.W_tri.size() != ntri || set.anchor.delta_a.size() != set.num_actuators ||
        set.anchor.delta_a_free.size() != set.num_actuators)
      throw InvalidArgument("dataset: anchor dimensions do not match");
    set.train = samples_from_table(read_csv(path), set.num_actuators, ntri);
    const auto test_path = sidecar_path(path, ".test.csv");
    if (std::filesystem::exists(test_path))
      set.test = samples_from_table(read_csv(test_path), set.num_actuators, ntri);
    return set;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("dataset: bad metadata: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

std::vector<int> default_hidden(int inputs, int outputs, int layers, int target) {
  if (layers < 2) throw InvalidArgument("train: an MLP needs at least 2 layers");
  // layers - 1 hidden widths h: inputs*h + (layers-2)*h*h + h*outputs ~ target.
  const double s = inputs + outputs;
  const double q = layers - 2;
  const double h = q == 0 ? target / s : (-s + std::sqrt(s * s + 4.0 * q * target)) / (2 * q);
  return std::vector<int>(std::size_t(layers - 1), std::max(int(std::lround(h)), 2));
}

Eigen::MatrixXd input_matrix(const std::vector<Sample>& samples, const Anchor& anchor) {
  if (samples.empty()) return {};
  const Eigen::Index na = samples.front().delta_a.size();
  const Eigen::Index nt = anchor.W_tri.size();
  Eigen::MatrixXd X(na + nt + anchor.delta_a_free.size(), Eigen::Index(samples.size()));
  for (std::size_t j = 0; j < samples.size(); ++j)
    X.col(Eigen::Index(j)) << samples[j].delta_a, anchor.W_tri, anchor.delta_a_free;
  return X;
}

Eigen::MatrixXd target_matrix(const std::vector<Sample>& samples) {
  if (samples.empty()) return {};
  const Eigen::Index nt = samples.front().W_tri.size();
  const Eigen::Index na = samples.front().delta_a_free.size();
  Eigen::MatrixXd Y(nt + na, Eigen::Index(samples.size()));
  for (std::size_t j = 0; j < samples.size(); ++j)
    Y.col(Eigen::Index(j)) << samples[j].W_tri, samples[j].delta_a_free;
  return Y;
}

Eigen::VectorXd SurrogateModel::make_input(const Eigen::VectorXd& delta_a) const {
  if (delta_a.size() != num_actuators)
    throw InvalidArgument("surrogate: expected " + std::to_string(num_actuators) +
                          " pull-in values, got " + std::to_string(delta_a.size()));
  Eigen::VectorXd x(net.input_size());
  x << delta_a, anchor.W_tri, anchor.delta_a_free;
  return x;
}

Prediction SurrogateModel::predict(const Eigen::VectorXd& delta_a) const {
  const Eigen::MatrixXd y = output.invert(net.forward(input.apply(make_input(delta_a))));
  const int nt = triangle_size(num_rows());
  Prediction p;
  p.W = from_upper_triangle(y.col(0).head(nt), num_rows());
  p.delta_a_free = y.col(0).tail(num_actuators);
  return p;
}

bool SurrogateModel::in_training_range(const Eigen::VectorXd& delta_a, double slack) const {
  if (train_lo.size() != delta_a.size()) return false;
  const Eigen::VectorXd pad = slack * (1.0 + (train_hi - train_lo).array().abs()).matrix();
  return ((delta_a - (train_lo - pad)).array() >= 0).all() &&
         ((train_hi + pad - delta_a).array() >= 0).all();
}

double evaluate_loss(const SurrogateModel& model, const std::vector<Sample>& samples) {
  if (samples.empty()) throw InvalidArgument("evaluate_loss: no samples");
  const Eigen::MatrixXd X = model.input.apply(input_matrix(samples, model.anchor));
  const Eigen::MatrixXd Y = model.output.apply(target_matrix(samples));
  return model.net.loss(X, Y);
}

TrainResult train(const SampleSet& set, const TrainOptions& opts) {
  if (set.train.empty() || set.test.empty())
    throw TrainingError("train: need non-empty training and test sets");
  if (opts.epochs < 0 || opts.batch_size < 1 || !(opts.learning_rate > 0))
    throw InvalidArgument("train: epochs >= 0, batch size >= 1 and rate > 0 required");

  const Eigen::MatrixXd Xraw = input_matrix(set.train, set.anchor);
  const Eigen::MatrixXd Yraw = target_matrix(set.train);

  SurrogateModel model;
  model.num_actuators = set.num_actuators;
  model.num_effector_rows = set.num_effector_rows;
  model.anchor = set.anchor;
  if (Xraw.cols() >= 2) {
    model.input = Standardizer::fit(Xraw);
    model.output = Standardizer::fit(Yraw);
  } else {
    model.input = {Xraw.col(0), Eigen::VectorXd::Ones(Xraw.rows())};
    model.output = {Yraw.col(0), Eigen::VectorXd::Ones(Yraw.rows())};
  }
  model.train_lo = Xraw.topRows(set.num_actuators).rowwise().minCoeff();
  model.train_hi = Xraw.topRows(set.num_actuators).rowwise().maxCoeff();
  model.seed = opts.seed;
  model.learning_rate = opts.learning_rate;
  model.batch_size = opts.batch_size;
  model.epochs = opts.epochs;

  const Eigen::MatrixXd X = model.input.apply(Xraw);
  const Eigen::MatrixXd Y = model.output.apply(Yraw);
  const Eigen::MatrixXd Xt = model.input.apply(input_matrix(set.test, set.anchor));
  const Eigen::MatrixXd Yt = model.output.apply(target_matrix(set.test));

  std::vector<int> sizes{int(X.rows())};
  std::vector<int> hidden = opts.hidden;
  if (hidden.empty())
    hidden = int(set.hidden_hint.size()) == opts.layers - 1
                 ? set.hidden_hint
                 : default_hidden(int(X.rows()), int(Y.rows()), opts.layers);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(int(Y.rows()));

  std::mt19937_64 rng(opts.seed);
  model.net = Mlp<double>::random(sizes, rng);
  Adam<double> adam(model.net);
  adam.rate = opts.learning_rate;

  TrainResult out;
  Mlp<double> best = model.net;
  double best_test = model.net.loss(Xt, Yt);
  int best_epoch = 0;
  out.curve.push_back({0, model.net.loss(X, Y), best_test});

  const Eigen::Index n = X.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  std::vector<DenseLayer<double>> grad;
  Eigen::MatrixXd xb, yb;
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    for (Eigen::Index i = n - 1; i > 0; --i) {
      std::uniform_int_distribution<Eigen::Index> pick(0, i);
      std::swap(order[std::size_t(i)], order[std::size_t(pick(rng))]);
    }
    double train_sum = 0.0;
    for (Eigen::Index start = 0; start < n; start += opts.batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(opts.batch_size, n - start);
      xb.resize(X.rows(), len);
      yb.resize(Y.rows(), len);
      for (Eigen::Index j = 0; j < len; ++j) {
        xb.col(j) = X.col(order[std::size_t(start + j)]);
        yb.col(j) = Y.col(order[std::size_t(start + j)]);
      }
      train_sum += model.net.loss(xb, yb, &grad) * double(len);
      adam.step(model.net, grad);
    }
    const double train_loss = train_sum / double(n);
    const double test_loss = model.net.loss(Xt, Yt);
    if (!std::isfinite(train_loss) || !std::isfinite(test_loss))
      throw TrainingError("train: loss diverged at epoch " + std::to_string(epoch) +
                          "; try a lower learning rate");
    out.curve.push_back({epoch, train_loss, test_loss});
    if (test_loss < best_test) {
      best_test = test_loss;
      best_epoch = epoch;
      best = model.net;
    }
  }
  model.net = std::move(best);
  model.best_epoch = best_epoch;
  model.best_test_loss = best_test;
  log::info("train: best test loss ", best_test, " at epoch ", best_epoch);
  out.model = std::move(model);
  return out;
}

// ---------------------------------------------------------------------------

std::string model_to_json_text(const SurrogateModel& m) {
  json layers = json::array();
  for (const auto& l : m.net.layers) {
    json w = json::array();
    for (Eigen::Index i = 0; i < l.w.rows(); ++i) w.push_back(to_json(l.w.row(i).transpose()));
    layers.push_back({{"w", w}, {"b", to_json(l.b)}, {"activation", l.relu ? "relu" : "linear"}});
  }
  json j;
  j["layers"] = layers;
  j["stats"] = {{"input", {{"mean", to_json(m.input.mean)}, {"std", to_json(m.input.std)}}},
                {"output", {{"mean", to_json(m.output.mean)}, {"std", to_json(m.output.std)}}}};
  j["anchor"] = {{"delta_a", to_json(m.anchor.delta_a)},
                 {"W_tri", to_json(m.anchor.W_tri)},
                 {"delta_a_free", to_json(m.anchor.delta_a_free)}};
  j["dims"] = {{"num_actuators", m.num_actuators}, {"num_effector_rows", m.num_effector_rows}};
  j["meta"] = {{"seed", m.seed},
               {"arch", m.net.sizes()},
               {"optimizer", m.optimizer},
               {"learning_rate", m.learning_rate},
               {"batch_size", m.batch_size},
               {"epochs", m.epochs},
               {"best_epoch", m.best_epoch},
               {"best_test_loss", m.best_test_loss},
               {"train_delta_a_lo", to_json(m.train_lo)},
               {"train_delta_a_hi", to_json(m.train_hi)}};
  return j.dump(1) + "\n";
}

SurrogateModel model_from_json_text(const std::string& text) {
  try {
    const json j = json::parse(text);
    SurrogateModel m;
    for (const auto& jl : j.at("layers")) {
      DenseLayer<double> l;
      const auto& w = jl.at("w");
      const auto b = vec_from_json(jl.at("b"));
      l.w.resize(Eigen::Index(w.size()), w.empty() ? 0 : Eigen::Index(w[0].size()));
      for (std::size_t i = 0; i < w.size(); ++i) {
        const auto row = vec_from_json(w[i]);
        if (row.size() != l.w.cols()) throw InvalidArgument("model: ragged weight matrix");
        l.w.row(Eigen::Index(i)) = row.transpose();
      }
      if (b.size() != l.w.rows()) throw InvalidArgument("model: bias size mismatch");
      l.b = b;
      const auto act = jl.value("activation", "relu");
      if (act != "relu" && act != "linear") throw InvalidArgument("model: unknown activation " + act);
      l.relu = act == "relu";
      if (!m.net.layers.empty() && m.net.layers.back().w.rows() != l.w.cols())
        throw InvalidArgument("model: layer dimensions do not chain");
      m.net.layers.push_back(std::move(l));
    }
    if (m.net.layers.empty()) throw InvalidArgument("model: no layers");
    const auto& st = j.at("stats");
    m.input = {vec_from_json(st.at("input").at("mean")), vec_from_json(st.at("input").at("std"))};
    m.output = {vec_from_json(st.at("output").at("mean")), vec_from_json(st.at("output").at("std"))};
    const auto& a = j.at("anchor");
    m.anchor = {vec_from_json(a.at("delta_a")), vec_from_json(a.at("W_tri")),
                vec_from_json(a.at("delta_a_free"))};
    m.num_actuators = j.at("dims").at("num_actuators").get<int>();
    m.num_effector_rows = j.at("dims").at("num_effector_rows").get<int>();
    const auto& meta = j.at("meta");
    m.seed = meta.value("seed", std::uint64_t(0));
    m.optimizer = meta.value("optimizer", "adam");
    m.learning_rate = meta.value("learning_rate", 1e-3);
    m.batch_size = meta.value("batch_size", 64);
    m.epochs = meta.value("epochs", 0);
    m.best_epoch = meta.value("best_epoch", 0);
    m.best_test_loss = meta.value("best_test_loss", 0.0);
    m.train_lo = vec_from_json(meta.at("train_delta_a_lo"));
    m.train_hi = vec_from_json(meta.at("train_delta_a_hi"));

    const int nt = triangle_size(m.num_rows());
    if (m.net.input_size() != m.num_actuators + nt + m.num_actuators ||
        m.net.output_size() != nt + m.num_actuators || m.input.mean.size() != m.net.input_size() ||
        m.input.std.size() != m.net.input_size() || m.output.mean.size() != m.net.output_size() ||
        m.output.std.size() != m.net.output_size() || m.anchor.W_tri.size() != nt)
      throw InvalidArgument("model: dimensions are inconsistent");
    return m;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("model: ") + e.what());
  }
}

void save_model(const SurrogateModel& model, const std::filesystem::path& path) {
  write_text(path, model_to_json_text(model));
}

SurrogateModel load_model(const std::filesystem::path& path) {
  return model_from_json_text(read_text(path));
}

void save_loss_curve(const std::vector<LossPoint>& curve, const std::filesystem::path& path) {
  CsvTable t;
  t.header = {"epoch", "train_loss", "test_loss"};
  for (const auto& p : curve) t.rows.push_back({double(p.epoch), p.train, p.test});
  write_csv(t, path);
}

}  // namespace compliant
