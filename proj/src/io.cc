#include "spontts/io.h"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "spontts/errors.h"

namespace spontts {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void PutU32(std::string* out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out->push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

uint32_t GetU32(const std::string& in, size_t pos) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace

std::string ReadFileBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFileBytes(const std::string& path, const std::string& bytes) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Eigen::MatrixXd RoundToFloat(const Eigen::MatrixXd& m) {
  return m.cast<float>().cast<double>();
}

std::string EncodeMelf(const Eigen::MatrixXd& matrix) {
  std::string out = "MELF";
  PutU32(&out, static_cast<uint32_t>(matrix.rows()));
  PutU32(&out, static_cast<uint32_t>(matrix.cols()));
  out.reserve(out.size() + 4 * matrix.size());
  for (int r = 0; r < matrix.rows(); ++r) {
    for (int c = 0; c < matrix.cols(); ++c) {
      const float f = static_cast<float>(matrix(r, c));
      uint32_t bits;
      std::memcpy(&bits, &f, sizeof(bits));
      PutU32(&out, bits);
    }
  }
  return out;
}

Eigen::MatrixXd DecodeMelf(const std::string& bytes, const std::string& where) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "MELF") != 0) {
    throw ValidationError(where + ": not a MELF file");
  }
  const uint32_t rows = GetU32(bytes, 4);
  const uint32_t cols = GetU32(bytes, 8);
  const uint64_t expected = 12 + 4ULL * rows * cols;
  if (bytes.size() != expected) {
    throw ValidationError(where + ": MELF size mismatch (expected " +
                          std::to_string(expected) + " bytes, found " +
                          std::to_string(bytes.size()) + ")");
  }
  Eigen::MatrixXd m(rows, cols);
  size_t pos = 12;
  for (uint32_t r = 0; r < rows; ++r) {
    for (uint32_t c = 0; c < cols; ++c) {
      const uint32_t bits = GetU32(bytes, pos);
      float f;
      std::memcpy(&f, &bits, sizeof(f));
      m(r, c) = f;
      pos += 4;
    }
  }
  return m;
}

void WriteMelf(const std::string& path, const Eigen::MatrixXd& matrix) {
  WriteFileBytes(path, EncodeMelf(matrix));
}

Eigen::MatrixXd ReadMelf(const std::string& path) {
  return DecodeMelf(ReadFileBytes(path), path);
}

// ---------------------------------------------------------------------------

namespace {

TextToken ParseToken(const json& j) {
  TextToken t;
  t.char_id = j.at("char_id").get<int>();
  t.word_boundary = j.at("word_boundary").get<bool>();
  t.prosody_level = j.at("prosody_level").get<int>();
  t.tag = ParseTag(j.at("tag").get<std::string>());
  return t;
}

json TokenJson(const TextToken& t) {
  return json{{"char_id", t.char_id},
              {"word_boundary", t.word_boundary},
              {"prosody_level", t.prosody_level},
              {"tag", std::string(TagName(t.tag))}};
}

}  // namespace

std::vector<Conversation> LoadManifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest " + path);
  const fs::path base = fs::path(path).parent_path();

  std::vector<std::string> order;
  std::map<std::string, std::vector<Utterance>> groups;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    Utterance u;
    try {
      const json j = json::parse(line);
      u.conv_id = j.at("conv_id").get<std::string>();
      u.turn_index = j.at("turn_index").get<int>();
      u.speaker_id = j.at("speaker_id").get<int>();
      u.utt_id = j.contains("utt_id")
                     ? j["utt_id"].get<std::string>()
                     : u.conv_id + "_t" + std::to_string(u.turn_index);
      for (const json& tj : j.at("tokens")) u.tokens.push_back(ParseToken(tj));
      const std::string mel_path =
          j.contains("mel_path") && !j["mel_path"].is_null()
              ? j["mel_path"].get<std::string>()
              : std::string();
      if (!mel_path.empty()) {
        const fs::path mp = fs::path(mel_path).is_absolute()
                                ? fs::path(mel_path)
                                : base / mel_path;
        Mel mel;
        mel.data = ReadMelf(mp.string());
        ValidateMel(mel, where);
        u.mel = std::move(mel);
      }
    } catch (const json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      if (msg.rfind(where, 0) == 0) throw;
      throw ValidationError(where + ": " + msg);
    }
    ValidateTokens(u.tokens, where);
    if (!groups.count(u.conv_id)) order.push_back(u.conv_id);
    groups[u.conv_id].push_back(std::move(u));
  }

  std::vector<Conversation> out;
  for (const std::string& id : order) {
    Conversation conv;
    conv.conv_id = id;
    conv.utterances = std::move(groups[id]);
    std::stable_sort(conv.utterances.begin(), conv.utterances.end(),
                     [](const Utterance& a, const Utterance& b) {
                       return a.turn_index < b.turn_index;
                     });
    ValidateConversation(conv);
    out.push_back(std::move(conv));
  }
  return out;
}

void WriteManifest(const std::string& path,
                   const std::vector<Conversation>& conversations) {
  const fs::path base = fs::path(path).parent_path();
  std::string text;
  for (const Conversation& conv : conversations) {
    for (const Utterance& u : conv.utterances) {
      json j;
      j["conv_id"] = u.conv_id;
      j["utt_id"] = u.utt_id;
      j["turn_index"] = u.turn_index;
      j["speaker_id"] = u.speaker_id;
      json tokens = json::array();
      for (const TextToken& t : u.tokens) tokens.push_back(TokenJson(t));
      j["tokens"] = std::move(tokens);
      std::string mel_path;
      if (u.mel) {
        mel_path = "mels/" + u.utt_id + ".mel";
        WriteMelf((base / mel_path).string(), u.mel->data);
      }
      j["mel_path"] = mel_path;
      text += j.dump();
      text += '\n';
    }
  }
  WriteFileBytes(path, text);
}

}  // namespace spontts
