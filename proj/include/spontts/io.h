#ifndef SPONTTS_IO_H_
#define SPONTTS_IO_H_

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spontts/corpus.h"

namespace spontts {

// MELF matrix file: "MELF", u32 LE rows, u32 LE cols, rows*cols float32 LE
// row-major. Values are stored as float32 and read back widened to double.
void WriteMelf(const std::string& path, const Eigen::MatrixXd& matrix);
Eigen::MatrixXd ReadMelf(const std::string& path);
std::string EncodeMelf(const Eigen::MatrixXd& matrix);
Eigen::MatrixXd DecodeMelf(const std::string& bytes, const std::string& where);

// Rounds every entry to the nearest float32 so a MELF round trip is exact.
Eigen::MatrixXd RoundToFloat(const Eigen::MatrixXd& m);

// Manifest: one JSON object per line with conv_id, turn_index, speaker_id,
// tokens [{char_id, word_boundary, prosody_level, tag}], mel_path and utt_id.
// mel_path is relative to the manifest's directory; empty means no mel.
std::vector<Conversation> LoadManifest(const std::string& path);

// Writes the manifest and, for utterances carrying a mel, one MELF file per
// utterance under `<dir of path>/mels/<utt_id>.mel`.
void WriteManifest(const std::string& path,
                   const std::vector<Conversation>& conversations);

std::string ReadFileBytes(const std::string& path);
void WriteFileBytes(const std::string& path, const std::string& bytes);

}  // namespace spontts

#endif  // SPONTTS_IO_H_
