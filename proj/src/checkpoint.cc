#include "spontts/checkpoint.h"

#include <cstring>

#include "spontts/errors.h"
#include "spontts/io.h"
#include "spontts/optimizer.h"

namespace spontts {

namespace {

void PutU32(std::string* out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out->push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void PutF64(std::string* out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  for (int i = 0; i < 8; ++i) out->push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string where)
      : bytes_(bytes), where_(std::move(where)) {}

  void Need(size_t n) const {
    if (pos_ + n > bytes_.size()) throw ValidationError(where_ + ": truncated checkpoint");
  }
  uint32_t U32() {
    Need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double F64() {
    Need(8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    double d;
    std::memcpy(&d, &bits, sizeof(d));
    return d;
  }
  std::string Str(size_t n) {
    Need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string where_;
  size_t pos_ = 0;
};

}  // namespace

const Eigen::MatrixXd* Checkpoint::Find(const std::string& name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return &m;
  }
  return nullptr;
}

std::string EncodeCheckpoint(const Checkpoint& ckpt) {
  std::string out = "SPCK";
  PutU32(&out, Checkpoint::kVersion);
  const std::string meta = ckpt.meta.dump();
  PutU32(&out, static_cast<uint32_t>(meta.size()));
  out += meta;
  PutU32(&out, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, m] : ckpt.tensors) {
    PutU32(&out, static_cast<uint32_t>(name.size()));
    out += name;
    PutU32(&out, static_cast<uint32_t>(m.rows()));
    PutU32(&out, static_cast<uint32_t>(m.cols()));
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) PutF64(&out, m(r, c));
  }
  return out;
}

Checkpoint DecodeCheckpoint(const std::string& bytes, const std::string& where) {
  Reader in(bytes, where);
  if (in.Str(4) != "SPCK") throw ValidationError(where + ": not a checkpoint");
  const uint32_t version = in.U32();
  if (version != Checkpoint::kVersion) {
    throw ValidationError(where + ": unsupported checkpoint version " +
                          std::to_string(version));
  }
  Checkpoint ckpt;
  try {
    ckpt.meta = nlohmann::json::parse(in.Str(in.U32()));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(where + ": bad checkpoint metadata: " + e.what());
  }
  const uint32_t count = in.U32();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = in.Str(in.U32());
    const uint32_t rows = in.U32();
    const uint32_t cols = in.U32();
    in.Need(8ULL * rows * cols);
    Eigen::MatrixXd m(rows, cols);
    for (uint32_t r = 0; r < rows; ++r)
      for (uint32_t c = 0; c < cols; ++c) m(r, c) = in.F64();
    ckpt.tensors.emplace_back(std::move(name), std::move(m));
  }
  if (!in.done()) throw ValidationError(where + ": trailing bytes in checkpoint");
  return ckpt;
}

void WriteCheckpoint(const std::string& path, const Checkpoint& ckpt) {
  WriteFileBytes(path, EncodeCheckpoint(ckpt));
}

Checkpoint ReadCheckpoint(const std::string& path) {
  return DecodeCheckpoint(ReadFileBytes(path), path);
}

void AddParameters(const ad::ParameterStore& store, Checkpoint* ckpt) {
  for (const auto& p : store.all()) {
    ckpt->tensors.emplace_back("param/" + p->name(), p->value);
  }
}

void AddOptimizerState(Adam& adam, const ad::ParameterStore& store,
                       Checkpoint* ckpt) {
  const auto& params = store.all();
  for (size_t i = 0; i < params.size(); ++i) {
    ckpt->tensors.emplace_back("adam.m/" + params[i]->name(), adam.first_moments()[i]);
    ckpt->tensors.emplace_back("adam.v/" + params[i]->name(), adam.second_moments()[i]);
  }
  ckpt->meta["optimizer_steps"] = adam.steps();
}

void LoadParameters(const Checkpoint& ckpt, ad::ParameterStore* store) {
  for (const auto& p : store->all()) {
    const Eigen::MatrixXd* m = ckpt.Find("param/" + p->name());
    if (m == nullptr) throw ValidationError("checkpoint lacks parameter " + p->name());
    if (m->rows() != p->value.rows() || m->cols() != p->value.cols()) {
      throw ValidationError("checkpoint shape mismatch for " + p->name());
    }
    p->value = *m;
  }
}

bool LoadOptimizerState(const Checkpoint& ckpt, const ad::ParameterStore& store,
                        Adam* adam) {
  if (!ckpt.meta.contains("optimizer_steps")) return false;
  const auto& params = store.all();
  for (size_t i = 0; i < params.size(); ++i) {
    const Eigen::MatrixXd* m = ckpt.Find("adam.m/" + params[i]->name());
    const Eigen::MatrixXd* v = ckpt.Find("adam.v/" + params[i]->name());
    if (m == nullptr || v == nullptr) {
      throw ValidationError("checkpoint lacks optimizer state for " + params[i]->name());
    }
    adam->first_moments()[i] = *m;
    adam->second_moments()[i] = *v;
  }
  adam->set_steps(ckpt.meta["optimizer_steps"].get<int64_t>());
  return true;
}

}  // namespace spontts
