#pragma once

#include <fstream>
#include <json.hpp>
#include <string>

#include "scanrl/mlp.hpp"

namespace scanrl {

inline constexpr const char* kPolicyFormat = "scanrl-policy";
inline constexpr int kPolicyVersion = 1;

struct LoadedPolicy {
  MlpParams params;
  std::string mdp_digest;
  int version = 0;
  nlohmann::json meta;
};

// Versioned JSON policy file. Parameters are stored as one flat array;
// nlohmann emits shortest round-trip decimals, so save/load is lossless.
inline void save_policy(const std::string& path, const MlpParams& params,
                        const std::string& mdp_digest, const nlohmann::json& meta = {}) {
  nlohmann::json j;
  j["format"] = kPolicyFormat;
  j["version"] = kPolicyVersion;
  j["mdp_digest"] = mdp_digest;
  j["dims"] = {{"n_in", params.dims.n_in},
               {"h1", params.dims.h1},
               {"h2", params.dims.h2},
               {"n_act", params.dims.n_act}};
  const Eigen::VectorXd flat = params.to_flat();
  std::vector<double> values(flat.data(), flat.data() + flat.size());
  j["params"] = values;
  if (!meta.is_null()) j["meta"] = meta;
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failure: " + path);
}

inline LoadedPolicy load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open policy file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("policy file is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object() || j.value("format", "") != kPolicyFormat) {
    throw Error("not a policy file: " + path);
  }
  LoadedPolicy lp;
  lp.version = j.value("version", 0);
  if (lp.version != kPolicyVersion) {
    throw Error("unsupported policy version " + std::to_string(lp.version));
  }
  lp.mdp_digest = j.value("mdp_digest", "");
  MlpDims dims;
  try {
    const auto& d = j.at("dims");
    dims.n_in = d.at("n_in").get<int>();
    dims.h1 = d.at("h1").get<int>();
    dims.h2 = d.at("h2").get<int>();
    dims.n_act = d.at("n_act").get<int>();
    const auto values = j.at("params").get<std::vector<double>>();
    Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(values.data(),
                                                             static_cast<long>(values.size()));
    lp.params = MlpParams::from_flat(dims, flat);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed policy file: " + std::string(e.what()));
  }
  if (j.contains("meta")) lp.meta = j["meta"];
  return lp;
}

}  // namespace scanrl
