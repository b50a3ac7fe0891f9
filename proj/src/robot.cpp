#include "compliant/robot.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "compliant/errors.hpp"

namespace compliant {

using nlohmann::json;

namespace {

Vec3 vec3(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw InvalidArgument("robot: " + what + " must be [x,y,z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Interval interval(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2) throw InvalidArgument("robot: " + what + " must be [lo,hi]");
  auto val = [](const json& v, double inf) {
    return v.is_null() ? inf : v.get<double>();
  };
  Interval iv{val(j[0], -std::numeric_limits<double>::infinity()),
              val(j[1], std::numeric_limits<double>::infinity())};
  if (!(iv.lo <= iv.hi)) throw InvalidArgument("robot: " + what + " has lo > hi");
  return iv;
}

int node_index(const json& j, const TetMesh& mesh, const std::string& what) {
  if (!j.is_number_integer()) throw InvalidArgument("robot: " + what + " must be an integer");
  const auto v = j.get<long long>();
  if (v < 0 || v >= mesh.num_nodes())
    throw InvalidArgument("robot: " + what + " index " + std::to_string(v) + " out of range");
  return int(v);
}

}  // namespace

double RobotModel::height() const {
  return mesh().bbox_max().z() - mesh().bbox_min().z();
}

Eigen::VectorXd RobotModel::rest_positions() const {
  return Eigen::Map<const Eigen::VectorXd>(mesh().nodes.data(), num_dofs());
}

void finalize_robot(RobotModel& robot) {
  const TetMesh& mesh = robot.mesh();
  const double tol = 1e-9 * (mesh.bbox_max() - mesh.bbox_min()).norm();
  robot.fixed_dofs.assign(std::size_t(robot.num_dofs()), 0);
  int fixed_count = 0;
  for (const auto& sel : robot.fixed)
    for (Eigen::Index i = 0; i < mesh.num_nodes(); ++i) {
      const Vec3 p = mesh.nodes.col(i);
      if (((p.array() >= sel.min.array() - tol) && (p.array() <= sel.max.array() + tol)).all())
        for (int c = 0; c < 3; ++c)
          if (sel.axes[c] && !robot.fixed_dofs[3 * i + c]) {
            robot.fixed_dofs[3 * i + c] = 1;
            ++fixed_count;
          }
    }
  if (fixed_count < 6)
    throw InvalidArgument("robot: fixed selectors constrain only " + std::to_string(fixed_count) +
                          " dofs; rigid motions are not anchored");

  auto& cs = robot.constraints;
  for (std::size_t i = 0; i < cs.actuators.size(); ++i) {
    auto& c = cs.actuators[i];
    if (c.num_points() < 2)
      throw InvalidArgument("robot: cable " + std::to_string(i) + " needs >= 2 path points");
    if (c.lambda_bounds.lo < 0)
      throw InvalidArgument("robot: cable " + std::to_string(i) + " lambda_min must be >= 0");
    for (int n : c.via_nodes)
      if (n < 0 || n >= mesh.num_nodes())
        throw InvalidArgument("robot: cable " + std::to_string(i) + " node out of range");
  }
  for (std::size_t i = 0; i < cs.effectors.size(); ++i)
    for (int n : cs.effectors[i].nodes)
      if (n < 0 || n >= mesh.num_nodes())
        throw InvalidArgument("robot: effector " + std::to_string(i) + " node out of range");
  cs.set_rest_lengths(mesh.nodes);
}

RobotModel robot_from_json_text(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("robot: parse failure: ") + e.what());
  }
  try {
    RobotModel robot;
    robot.name = j.value("name", "robot");

    TetMesh mesh;
    const auto& jm = j.at("mesh");
    if (jm.contains("file")) {
      std::filesystem::path p = jm["file"].get<std::string>();
      mesh = load_mesh(p.is_absolute() ? p : base_dir / p);
    } else {
      const auto& box = jm.at("box");
      const Vec3 dims = vec3(box.at("dims"), "mesh.box.dims");
      const auto& r = box.at("res");
      if (!r.is_array() || r.size() != 3) throw InvalidArgument("robot: mesh.box.res must be [i,j,k]");
      mesh = build_box_mesh(dims, Eigen::Vector3i(r[0].get<int>(), r[1].get<int>(), r[2].get<int>()));
    }

    Material mat;
    const auto& jmat = j.at("material");
    mat.young_modulus = jmat.at("young_modulus").get<double>();
    mat.poisson_ratio = jmat.at("poisson_ratio").get<double>();
    mat.density = jmat.value("density", 0.0);
    if (jmat.contains("gravity")) mat.gravity = vec3(jmat["gravity"], "material.gravity");
    if (jmat.contains("regions"))
      for (const auto& jr : jmat["regions"])
        mat.regions.push_back({vec3(jr.at("min"), "region.min"), vec3(jr.at("max"), "region.max"),
                               jr.at("young_modulus").get<double>()});
    robot.body = std::make_shared<const ElasticBody>(std::move(mesh), std::move(mat));
    const TetMesh& m = robot.body->mesh();

    for (const auto& jf : j.at("fixed")) {
      FixedSelector sel{vec3(jf.at("min"), "fixed.min"), vec3(jf.at("max"), "fixed.max")};
      if (jf.contains("axes")) {
        sel.axes = {false, false, false};
        for (const auto& a : jf["axes"]) {
          const int ax = a.get<int>();
          if (ax < 0 || ax > 2) throw InvalidArgument("robot: fixed.axes entries must be 0..2");
          sel.axes[ax] = true;
        }
      }
      robot.fixed.push_back(sel);
    }

    if (j.contains("cables"))
      for (const auto& jc : j["cables"]) {
        CableActuator c;
        if (jc.contains("via_nodes"))
          for (const auto& n : jc["via_nodes"]) c.via_nodes.push_back(node_index(n, m, "cable via node"));
        else
          for (const auto& p : jc.at("via_points"))
            c.via_nodes.push_back(int(nearest_node(m, vec3(p, "cable via point"))));
        if (jc.contains("pull_anchor")) c.pull_anchor = vec3(jc["pull_anchor"], "cable.pull_anchor");
        if (jc.contains("lambda_bounds")) c.lambda_bounds = interval(jc["lambda_bounds"], "lambda_bounds");
        if (jc.contains("delta_bounds")) c.delta_bounds = interval(jc["delta_bounds"], "delta_bounds");
        robot.constraints.actuators.push_back(std::move(c));
      }

    if (j.contains("effectors"))
      for (const auto& je : j["effectors"]) {
        Effector e;
        if (je.contains("node")) {
          e = Effector::at_node(node_index(je["node"], m, "effector node"), Vec3::Zero());
        } else if (je.contains("point")) {
          e = Effector::at_node(int(nearest_node(m, vec3(je["point"], "effector point"))),
                                Vec3::Zero());
        } else {
          const auto t = je.at("tet").get<long long>();
          if (t < 0 || t >= m.num_tets()) throw InvalidArgument("robot: effector tet out of range");
          const auto& w = je.at("weights");
          if (!w.is_array() || w.size() != 4) throw InvalidArgument("robot: effector weights must have 4 entries");
          e = Effector::barycentric(m.tets.col(t),
                                    Eigen::Vector4d(w[0].get<double>(), w[1].get<double>(),
                                                    w[2].get<double>(), w[3].get<double>()),
                                    Vec3::Zero());
        }
        e.goal = je.contains("goal") ? vec3(je["goal"], "effector goal")
                                     : effector_position(m.nodes, e);
        robot.constraints.effectors.push_back(std::move(e));
      }

    if (j.contains("scenario")) {
      const auto& js = j["scenario"];
      auto& sc = robot.scenario;
      sc.tol_goal_fraction = js.value("tol_goal_fraction", sc.tol_goal_fraction);
      sc.circle_radius_fraction = js.value("circle_radius_fraction", sc.circle_radius_fraction);
      if (js.contains("circle_center_offset_fraction"))
        sc.circle_center_offset_fraction =
            vec3(js["circle_center_offset_fraction"], "scenario.circle_center_offset_fraction");
      sc.max_steps = js.value("max_steps", sc.max_steps);
    }

    if (j.contains("surrogate") && j["surrogate"].contains("hidden")) {
      for (const auto& w : j["surrogate"]["hidden"]) {
        const int v = w.get<int>();
        if (v < 1) throw InvalidArgument("robot: surrogate.hidden widths must be >= 1");
        robot.surrogate_hidden.push_back(v);
      }
    }

    finalize_robot(robot);
    return robot;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("robot: invalid config: ") + e.what());
  }
}

RobotModel load_robot(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("robot: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return robot_from_json_text(ss.str(), path.parent_path());
}

}  // namespace compliant
