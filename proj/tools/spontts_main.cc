// Command-line front end: corpus generation, training, tagging, synthesis and
// evaluation. Exit codes: 0 success, 2 invalid input, 3 numerical failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "spontts/checkpoint.h"
#include "spontts/corpus.h"
#include "spontts/errors.h"
#include "spontts/frontend.h"
#include "spontts/io.h"
#include "spontts/rng.h"
#include "spontts/synthesis.h"
#include "spontts/synthetic.h"
#include "spontts/tagger.h"
#include "spontts/training.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace spontts {
namespace {

struct Common {
  uint64_t seed = 1;
  std::string config_path;
  std::string out;
};

json LoadConfig(const std::string& path) {
  if (path.empty()) return json::object();
  json j;
  try {
    j = json::parse(ReadFileBytes(path));
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError(path + ": config must be a JSON object");
  return j;
}

json Section(const json& config, const char* name) {
  if (!config.contains(name)) return json::object();
  if (!config[name].is_object()) {
    throw ValidationError(std::string("config section \"") + name + "\" must be an object");
  }
  return config[name];
}

// nlohmann throws its own exceptions for wrong value types inside sections.
template <typename Fn>
auto ParseSection(const char* name, Fn fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config section \"") + name + "\": " + e.what());
  }
}

void RequireOut(const Common& common) {
  if (common.out.empty()) throw ValidationError("--out is required");
  fs::create_directories(common.out);
}

std::string OutPath(const Common& common, const std::string& name) {
  return (fs::path(common.out) / name).string();
}

void WriteJson(const std::string& path, const json& j) {
  WriteFileBytes(path, j.dump(2) + "\n");
}

std::vector<std::vector<TextToken>> Sentences(const std::vector<Conversation>& convs) {
  std::vector<std::vector<TextToken>> out;
  for (const Conversation& c : convs) {
    for (const Utterance& u : c.utterances) out.push_back(u.tokens);
  }
  return out;
}

const Lexicon& LexiconFor(const json& config, std::optional<Lexicon>* storage) {
  if (config.contains("lexicon")) {
    storage->emplace(Lexicon::FromFile(config["lexicon"].get<std::string>()));
    return **storage;
  }
  return Lexicon::Default();
}

HashEmbeddingProvider ProviderFor(const json& config) {
  const json sec = Section(config, "embedding");
  return ParseSection("embedding", [&] {
    return HashEmbeddingProvider(sec.value("dim", 32), sec.value("salt", 0x5EEDULL));
  });
}

// ---------------------------------------------------------------------------

int GenCorpus(const Common& common) {
  RequireOut(common);
  const json config = LoadConfig(common.config_path);
  std::optional<Lexicon> lex_storage;
  const Lexicon& lexicon = LexiconFor(config, &lex_storage);
  const SynthConfig cfg =
      ParseSection("corpus", [&] { return SynthConfig::FromJson(Section(config, "corpus")); });
  SyntheticCorpus corpus = GenerateSyntheticCorpus(cfg, common.seed, lexicon);
  WriteManifest(OutPath(common, "manifest.jsonl"), corpus.conversations);
  json gammas = json::object();
  for (size_t c = 0; c < corpus.conversations.size(); ++c) {
    gammas[corpus.conversations[c].conv_id] = corpus.gammas[c];
  }
  WriteJson(OutPath(common, "gammas.json"), gammas);
  std::cout << "wrote " << corpus.conversations.size() << " conversations to "
            << common.out << "\n";
  return 0;
}

int TrainTaggerCmd(const Common& common, const std::string& manifest) {
  RequireOut(common);
  const json config = LoadConfig(common.config_path);
  std::optional<Lexicon> lex_storage;
  LexiconFor(config, &lex_storage);
  HashEmbeddingProvider provider = ProviderFor(config);
  TaggerConfig cfg =
      ParseSection("tagger", [&] { return TaggerConfig::FromJson(Section(config, "tagger")); });
  cfg.seed = common.seed;
  const std::vector<Conversation> convs = LoadManifest(manifest);
  const std::vector<std::vector<TextToken>> sentences = Sentences(convs);
  std::unique_ptr<TaggerModel> model = TrainTagger(sentences, provider, cfg);
  WriteCheckpoint(OutPath(common, "tagger.ckpt"), model->ToCheckpoint());

  std::vector<std::vector<BehaviorTag>> pred, gold;
  for (const std::vector<TextToken>& s : sentences) {
    pred.push_back(ArgmaxTags(model->Predict(s, provider)));
    std::vector<BehaviorTag> g;
    for (const TextToken& t : s) g.push_back(t.tag);
    gold.push_back(std::move(g));
  }
  const TagMetrics metrics = EvaluateTags(pred, gold);
  json per_class = json::object();
  for (int c = 0; c < kNumBehaviorTags; ++c) {
    const ClassMetrics& m = metrics.per_class[c];
    per_class[std::string(TagName(TagFromIndex(c)))] = {{"precision", m.precision},
                                                        {"recall", m.recall},
                                                        {"f1", m.f1},
                                                        {"support", m.support}};
  }
  WriteJson(OutPath(common, "metrics.json"),
            {{"train_accuracy", metrics.accuracy},
             {"tokens", metrics.tokens},
             {"per_class", per_class},
             {"epoch_losses", model->epoch_losses}});
  std::cout << "tagger train accuracy " << metrics.accuracy << "\n";
  return 0;
}

int TagCmd(const Common& common, const std::string& tagger_path,
           const std::string& manifest, double p) {
  RequireOut(common);
  const json config = LoadConfig(common.config_path);
  HashEmbeddingProvider provider = ProviderFor(config);
  std::unique_ptr<TaggerModel> tagger = TaggerModel::FromCheckpoint(ReadCheckpoint(tagger_path));
  std::ostringstream lines;
  for (const Conversation& c : LoadManifest(manifest)) {
    for (const Utterance& u : c.utterances) {
      const TagDistribution dist = tagger->Predict(u.tokens, provider);
      json tags = json::array();
      for (BehaviorTag t : SelectBehaviors(dist, p)) tags.push_back(std::string(TagName(t)));
      lines << json{{"utt_id", u.utt_id}, {"p", p}, {"tags", tags}}.dump() << "\n";
    }
  }
  WriteFileBytes(OutPath(common, "tags.jsonl"), lines.str());
  return 0;
}

std::vector<PreparedUtterance> PretrainSet(const json& config, const Common& common,
                                           const std::string& pretrain_manifest,
                                           const Lexicon& lexicon,
                                           const EmbeddingProvider& provider) {
  std::vector<Conversation> convs;
  if (!pretrain_manifest.empty()) {
    convs = LoadManifest(pretrain_manifest);
  } else {
    SynthConfig cfg = ParseSection(
        "pretrain_corpus", [&] { return SynthConfig::FromJson(Section(config, "pretrain_corpus")); });
    cfg.tag_behaviors = false;
    convs = GenerateSyntheticCorpus(cfg, HashCombine(common.seed, 0x50F7ULL), lexicon)
                .conversations;
  }
  std::vector<PreparedUtterance> out;
  for (const Conversation& c : convs) {
    for (const Utterance& u : c.utterances) {
      if (!u.mel) throw ValidationError("pretraining utterance " + u.utt_id + " has no mel");
      out.push_back(Prepare(u, lexicon, provider, /*strip_tags=*/true));
    }
  }
  return out;
}

int TrainTtsCmd(const Common& common, const std::string& manifest,
                const std::string& validation, const std::string& stage,
                const std::string& pretrain_ckpt, const std::string& pretrain_manifest) {
  RequireOut(common);
  const json config = LoadConfig(common.config_path);
  std::optional<Lexicon> lex_storage;
  const Lexicon& lexicon = LexiconFor(config, &lex_storage);
  HashEmbeddingProvider provider = ProviderFor(config);
  TtsModelConfig model_cfg = ParseSection(
      "model", [&] { return TtsModelConfig::FromJson(Section(config, "model")); });
  TrainConfig train_cfg =
      ParseSection("train", [&] { return TrainConfig::FromJson(Section(config, "train")); });
  train_cfg.seed = common.seed;
  model_cfg.init_seed = HashCombine(common.seed, 0x1417ULL);

  std::vector<PreparedPair> train;
  if (stage != "pretrain") {
    if (manifest.empty()) throw ValidationError("--manifest is required for finetuning");
    const std::vector<ConversationPair> pairs = MakePairs(LoadManifest(manifest));
    train = PreparePairs(pairs, lexicon, provider);
  }
  std::vector<PreparedPair> valid;
  if (!validation.empty()) {
    const std::vector<ConversationPair> pairs = MakePairs(LoadManifest(validation));
    valid = PreparePairs(pairs, lexicon, provider);
  }

  std::ofstream log_file(OutPath(common, "train_log.jsonl"), std::ios::binary);
  LogFn log = [&](const json& line) { log_file << line.dump() << "\n"; };

  json eval = json::object();
  if (stage == "finetune") {
    if (pretrain_ckpt.empty()) {
      throw ValidationError("--pretrain is required when finetuning alone");
    }
    std::vector<double> values;
    Checkpoint final_ckpt =
        RunFinetuneFrom(pretrain_ckpt, train_cfg, train, valid, &values, log);
    WriteCheckpoint(OutPath(common, "final.ckpt"), final_ckpt);
    eval["finetune"] = values;
  } else if (stage == "pretrain" || stage == "all") {
    std::vector<PreparedUtterance> pretrain =
        PretrainSet(config, common, pretrain_manifest, lexicon, provider);
    TrainConfig cfg = train_cfg;
    if (stage == "pretrain") cfg.epochs = 0;
    ScheduleResult result =
        RunSchedule(model_cfg, cfg, pretrain, train, valid, common.out, log);
    eval["pretrain"] = result.pretrain_eval;
    eval["finetune"] = result.finetune_eval;
    if (!valid.empty() && stage == "all") {
      std::unique_ptr<TtsSystem> system = TtsSystem::FromCheckpoint(result.final);
      eval["validation_rcon"] = EvaluateRcon(*system, valid);
      eval["validation_rcon_zero_context"] = EvaluateRcon(*system, valid, true);
    }
  } else {
    throw ValidationError("--stage must be pretrain, finetune or all");
  }
  WriteJson(OutPath(common, "eval.json"), eval);
  return 0;
}

int SynthCmd(const Common& common, const std::string& tts_path,
             const std::string& tagger_path, const std::string& script_path, double p,
             bool script_tags, int max_frames) {
  RequireOut(common);
  const json config = LoadConfig(common.config_path);
  std::optional<Lexicon> lex_storage;
  const Lexicon& lexicon = LexiconFor(config, &lex_storage);
  HashEmbeddingProvider provider = ProviderFor(config);
  std::unique_ptr<TtsSystem> system = TtsSystem::FromCheckpoint(ReadCheckpoint(tts_path));
  std::unique_ptr<TaggerModel> tagger;
  if (!tagger_path.empty()) {
    tagger = TaggerModel::FromCheckpoint(ReadCheckpoint(tagger_path));
  }
  json script;
  try {
    script = json::parse(ReadFileBytes(script_path));
  } catch (const json::exception& e) {
    throw ValidationError(script_path + ": " + e.what());
  }
  SynthesisRequest request;
  request.turns = ScriptFromJson(script);
  request.p = p;
  request.use_script_tags = script_tags;
  request.max_frames = max_frames;
  std::vector<SynthesizedTurn> turns =
      SynthConversation(*system, tagger.get(), provider, lexicon, request);
  json transcript = json::array();
  for (size_t i = 0; i < turns.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "turn_%02zu.mel", i + 1);
    WriteMelf(OutPath(common, name), turns[i].mel.data);
    json tags = json::array();
    for (BehaviorTag t : turns[i].tags) tags.push_back(std::string(TagName(t)));
    transcript.push_back({{"turn", i + 1},
                          {"speaker_id", request.turns[i].speaker_id},
                          {"mel", name},
                          {"frames", turns[i].mel.frames()},
                          {"overflow", turns[i].overflow},
                          {"tags", tags}});
    if (turns[i].overflow) {
      std::cerr << "warning: turn " << i + 1 << " hit max_frames without a stop\n";
    }
  }
  WriteJson(OutPath(common, "transcript.json"), {{"p", p}, {"turns", transcript}});
  return 0;
}

std::vector<double> ParseGrid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      grid.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("bad p grid entry '" + item + "'");
    }
  }
  return grid;
}

int EvalDurationCmd(const Common& common, const std::string& tts_path,
                    const std::string& tagger_path, const std::string& manifest,
                    const std::string& grid_text, int max_frames) {
  RequireOut(common);
  const json config = LoadConfig(common.config_path);
  std::optional<Lexicon> lex_storage;
  const Lexicon& lexicon = LexiconFor(config, &lex_storage);
  HashEmbeddingProvider provider = ProviderFor(config);
  std::unique_ptr<TtsSystem> system = TtsSystem::FromCheckpoint(ReadCheckpoint(tts_path));
  std::unique_ptr<TaggerModel> tagger =
      TaggerModel::FromCheckpoint(ReadCheckpoint(tagger_path));
  std::vector<std::vector<ScriptTurn>> scripts;
  for (const Conversation& c : LoadManifest(manifest)) {
    scripts.push_back(ScriptFromConversation(c));
  }
  const std::vector<double> grid = ParseGrid(grid_text);
  DurationReport report =
      DurationCurve(*system, *tagger, provider, lexicon, scripts, grid, max_frames);
  json out = report.ToJson();
  if (grid.size() >= 2) {
    std::vector<double> durations;
    for (const DurationRow& r : report.rows) durations.push_back(r.mean_frames);
    out["spearman"] = SpearmanCorrelation(grid, durations);
  }
  WriteJson(OutPath(common, "duration.json"), out);
  for (const DurationRow& r : report.rows) {
    std::cout << "p=" << r.p << " mean_frames=" << r.mean_frames << "\n";
  }
  return 0;
}

int ProbeSpeakerCmd(const Common& common, const std::string& tts_path,
                    const std::string& manifest, const std::string& embeddings_dir) {
  RequireOut(common);
  Eigen::MatrixXd embeddings;
  std::vector<int> labels;
  if (!embeddings_dir.empty()) {
    json label_map;
    try {
      label_map = json::parse(ReadFileBytes((fs::path(embeddings_dir) / "labels.json").string()));
    } catch (const json::exception& e) {
      throw ValidationError(std::string("labels.json: ") + e.what());
    }
    std::vector<Eigen::RowVectorXd> rows;
    for (auto it = label_map.begin(); it != label_map.end(); ++it) {
      Eigen::MatrixXd m = ReadMelf((fs::path(embeddings_dir) / (it.key() + ".mel")).string());
      if (m.rows() != 1) throw ValidationError(it.key() + ".mel must hold a 1 x D matrix");
      rows.push_back(m.row(0));
      labels.push_back(it.value().get<int>());
    }
    if (rows.empty()) throw ValidationError("no embeddings listed in labels.json");
    embeddings.resize(static_cast<int>(rows.size()), rows[0].size());
    for (size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != embeddings.cols()) throw ValidationError("embedding widths differ");
      embeddings.row(static_cast<int>(i)) = rows[i];
    }
  } else {
    if (tts_path.empty() || manifest.empty()) {
      throw ValidationError("probe-speaker needs --embeddings or both --tts and --manifest");
    }
    std::unique_ptr<TtsSystem> system = TtsSystem::FromCheckpoint(ReadCheckpoint(tts_path));
    const fs::path dir = fs::path(common.out) / "embeddings";
    fs::create_directories(dir);
    json label_map = json::object();
    std::vector<Eigen::RowVectorXd> rows;
    for (const Conversation& c : LoadManifest(manifest)) {
      for (const Utterance& u : c.utterances) {
        if (!u.mel) throw ValidationError("utterance " + u.utt_id + " has no mel");
        Eigen::MatrixXd e = RoundToFloat(system->PreviousEmbedding(*u.mel));
        WriteMelf((dir / (u.utt_id + ".mel")).string(), e);
        label_map[u.utt_id] = u.speaker_id;
        rows.push_back(e.row(0));
        labels.push_back(u.speaker_id);
      }
    }
    WriteJson((dir / "labels.json").string(), label_map);
    embeddings.resize(static_cast<int>(rows.size()), rows.empty() ? 0 : rows[0].size());
    for (size_t i = 0; i < rows.size(); ++i) embeddings.row(static_cast<int>(i)) = rows[i];
  }
  std::map<int, int> counts;
  for (int y : labels) ++counts[y];
  for (const auto& [label, count] : counts) {
    if (count < 20) {
      std::cerr << "warning: speaker " << label << " has only " << count
                << " embeddings (>= 20 recommended)\n";
    }
  }
  const double accuracy = ProbeSpeaker(embeddings, labels, common.seed);
  WriteJson(OutPath(common, "probe.json"),
            {{"accuracy", accuracy}, {"samples", static_cast<int>(labels.size())}});
  std::cout << "probe accuracy " << accuracy << "\n";
  return 0;
}

void AddCommon(CLI::App* cmd, Common* common) {
  cmd->add_option("--seed", common->seed, "random seed")->capture_default_str();
  cmd->add_option("--config", common->config_path, "JSON configuration file");
  cmd->add_option("--out", common->out, "output directory")->required();
}

int Run(int argc, char** argv) {
  CLI::App app{"Spontaneous-style conversational TTS toolkit"};
  app.require_subcommand(1);
  Common common;

  CLI::App* gen = app.add_subcommand("gen-corpus", "generate the synthetic conversation corpus");
  AddCommon(gen, &common);

  std::string manifest, validation, tagger_path, tts_path, script_path, stage = "all";
  std::string pretrain_ckpt, pretrain_manifest, embeddings_dir;
  std::string grid = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0";
  double p = 0.0;
  int max_frames = 400;
  bool script_tags = false;

  CLI::App* train_tagger = app.add_subcommand("train-tagger", "train the behavior tagger");
  AddCommon(train_tagger, &common);
  train_tagger->add_option("--manifest", manifest, "training manifest")->required();

  CLI::App* tag = app.add_subcommand("tag", "predict behavior tags at frequency p");
  AddCommon(tag, &common);
  tag->add_option("--tagger", tagger_path, "tagger checkpoint")->required();
  tag->add_option("--manifest", manifest, "utterances to tag")->required();
  tag->add_option("--p", p, "behavior frequency in [0, 1]")->required();

  CLI::App* train_tts = app.add_subcommand("train-tts", "pretrain and finetune the acoustic model");
  AddCommon(train_tts, &common);
  train_tts->add_option("--manifest", manifest, "conversation manifest for finetuning");
  train_tts->add_option("--validation", validation, "held-out conversation manifest");
  train_tts->add_option("--stage", stage, "pretrain, finetune or all")->capture_default_str();
  train_tts->add_option("--pretrain", pretrain_ckpt, "pretrain checkpoint (finetune stage)");
  train_tts->add_option("--pretrain-manifest", pretrain_manifest,
                        "flat pretraining manifest (default: generated)");

  CLI::App* synth = app.add_subcommand("synth", "synthesize a conversation script");
  AddCommon(synth, &common);
  synth->add_option("--tts", tts_path, "acoustic model checkpoint")->required();
  synth->add_option("--tagger", tagger_path, "tagger checkpoint");
  synth->add_option("--script", script_path, "conversation script JSON")->required();
  synth->add_option("--p", p, "behavior frequency in [0, 1]");
  synth->add_flag("--script-tags", script_tags, "use the tags written in the script");
  synth->add_option("--max-frames", max_frames, "free-running frame limit")->capture_default_str();

  CLI::App* eval = app.add_subcommand("eval-duration", "mean synthesized duration per p");
  AddCommon(eval, &common);
  eval->add_option("--tts", tts_path, "acoustic model checkpoint")->required();
  eval->add_option("--tagger", tagger_path, "tagger checkpoint")->required();
  eval->add_option("--manifest", manifest, "conversations used as scripts")->required();
  eval->add_option("--grid", grid, "comma-separated ascending p values")->capture_default_str();
  eval->add_option("--max-frames", max_frames, "free-running frame limit")->capture_default_str();

  CLI::App* probe = app.add_subcommand("probe-speaker", "speaker probe on context embeddings");
  AddCommon(probe, &common);
  probe->add_option("--tts", tts_path, "acoustic model checkpoint");
  probe->add_option("--manifest", manifest, "utterances to embed");
  probe->add_option("--embeddings", embeddings_dir, "directory of 1 x D MELF files + labels.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (gen->parsed()) return GenCorpus(common);
  if (train_tagger->parsed()) return TrainTaggerCmd(common, manifest);
  if (tag->parsed()) return TagCmd(common, tagger_path, manifest, p);
  if (train_tts->parsed()) {
    return TrainTtsCmd(common, manifest, validation, stage, pretrain_ckpt, pretrain_manifest);
  }
  if (synth->parsed()) {
    return SynthCmd(common, tts_path, tagger_path, script_path, p, script_tags, max_frames);
  }
  if (eval->parsed()) {
    return EvalDurationCmd(common, tts_path, tagger_path, manifest, grid, max_frames);
  }
  if (probe->parsed()) return ProbeSpeakerCmd(common, tts_path, manifest, embeddings_dir);
  return 2;
}

}  // namespace
}  // namespace spontts

int main(int argc, char** argv) {
  try {
    return spontts::Run(argc, argv);
  } catch (const spontts::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const spontts::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
