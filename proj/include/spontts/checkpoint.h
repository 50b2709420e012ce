#ifndef SPONTTS_CHECKPOINT_H_
#define SPONTTS_CHECKPOINT_H_

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "spontts/autodiff.h"

namespace spontts {

class Adam;

// Versioned container of named matrices plus an embedded JSON document.
//
// Layout (little-endian): "SPCK", u32 version, u32 json length, json bytes,
// u32 tensor count, then per tensor: u32 name length, name, u32 rows,
// u32 cols, rows*cols float64 row-major.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;

  const Eigen::MatrixXd* Find(const std::string& name) const;
};

std::string EncodeCheckpoint(const Checkpoint& ckpt);
Checkpoint DecodeCheckpoint(const std::string& bytes, const std::string& where);
void WriteCheckpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint ReadCheckpoint(const std::string& path);

// Parameters are stored under "param/<name>"; optimizer moments under
// "adam.m/<name>" and "adam.v/<name>" with the step count in meta.
void AddParameters(const ad::ParameterStore& store, Checkpoint* ckpt);
void AddOptimizerState(Adam& adam, const ad::ParameterStore& store,
                       Checkpoint* ckpt);
// Every parameter of `store` must be present with a matching shape.
void LoadParameters(const Checkpoint& ckpt, ad::ParameterStore* store);
// Returns false when the checkpoint carries no optimizer state.
bool LoadOptimizerState(const Checkpoint& ckpt, const ad::ParameterStore& store,
                        Adam* adam);

}  // namespace spontts

#endif  // SPONTTS_CHECKPOINT_H_
