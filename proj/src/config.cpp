#include "qts/config.hpp"

#include <fstream>
#include <stdexcept>

namespace qts {

namespace {

template<int N>
std::vector<double> as_vector(const Eigen::Matrix<double, N, 1> & v)
{
  return {v.data(), v.data() + N};
}

template<int N>
void read_vector(const nlohmann::json & j, const char * key, Eigen::Matrix<double, N, 1> & out)
{
  if (!j.contains(key)) { return; }
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != static_cast<std::size_t>(N)) {
    throw std::invalid_argument(std::string("parameter '") + key + "' needs " + std::to_string(N)
                                + " entries");
  }
  for (int i = 0; i < N; ++i) { out(i) = v[static_cast<std::size_t>(i)]; }
}

}  // namespace

nlohmann::json to_json(const ModelParams & p)
{
  return {{"a", as_vector(p.a)}, {"A", as_vector(p.A)}, {"gamma", as_vector(p.gamma)},
          {"rho", p.rho},        {"g", p.g_a}};
}

nlohmann::json to_json(const NoiseParams & n)
{
  return {{"sigma", as_vector(n.sigma)}, {"sigma_d", as_vector(n.sigma_d)}, {"r2", as_vector(n.r2)}};
}

ModelParams model_params_from_json(const nlohmann::json & j, ModelParams base)
{
  read_vector(j, "a", base.a);
  read_vector(j, "A", base.A);
  read_vector(j, "gamma", base.gamma);
  if (j.contains("rho")) { base.rho = j.at("rho").get<double>(); }
  if (j.contains("g")) { base.g_a = j.at("g").get<double>(); }
  base.validate();
  return base;
}

NoiseParams noise_params_from_json(const nlohmann::json & j, NoiseParams base)
{
  read_vector(j, "sigma", base.sigma);
  read_vector(j, "sigma_d", base.sigma_d);
  read_vector(j, "r2", base.r2);
  base.validate();
  return base;
}

ModelParams model_preset(const std::string & name)
{
  if (name == "nominal") { return ModelParams::nominal(); }
  if (name == "estimated-rig") { return ModelParams::estimated_rig(); }
  throw std::invalid_argument("unknown parameter preset '" + name + "'");
}

NoiseParams noise_preset(const std::string & name)
{
  if (name == "estimated-rig") { return NoiseParams::estimated_rig(); }
  if (name == "zero") { return NoiseParams{}; }
  throw std::invalid_argument("unknown noise preset '" + name + "'");
}

ModelParams model_params_from_config(const nlohmann::json & j)
{
  if (j.is_string()) { return model_preset(j.get<std::string>()); }
  if (j.contains("model")) { return model_params_from_json(j.at("model")); }
  return model_params_from_json(j);
}

nlohmann::json read_json_file(const std::string & path)
{
  std::ifstream in(path);
  if (!in) { throw std::runtime_error("cannot open '" + path + "'"); }
  return nlohmann::json::parse(in);
}

void write_json_file(const std::string & path, const nlohmann::json & j)
{
  std::ofstream out(path);
  if (!out) { throw std::runtime_error("cannot write '" + path + "'"); }
  out << j.dump(2) << '\n';
}

}  // namespace qts
