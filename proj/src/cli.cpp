#include "unmt/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "unmt/cipher.hpp"
#include "unmt/decode.hpp"
#include "unmt/errors.hpp"

namespace unmt::cli {
namespace fs = std::filesystem;

namespace {

const char* const kTrainSource = "train.s";
const char* const kTrainTarget = "train.t";
const char* const kDevSource = "dev.s";
const char* const kDevTarget = "dev.t";
const char* const kTestSource = "test.s";
const char* const kTestTarget = "test.t";
const char* const kDictionary = "dict.tsv";
const char* const kEmbeddings = "embeddings.vec";

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

std::ofstream open_output(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// Writes next to the target and renames, so an interrupted save never leaves
// a truncated checkpoint behind.
void save_atomically(const fs::path& path, const Checkpoint& ck) {
  fs::path tmp = path;
  tmp += ".tmp";
  save_checkpoint(tmp, ck);
  fs::rename(tmp, path);
}

Lang parse_direction(const std::string& d) { return d == "s2t" ? Lang::Source : Lang::Target; }

std::map<std::string, std::string> parse_assignments(const std::vector<std::string>& items) {
  std::map<std::string, std::string> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + item + "'");
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

struct DriveHooks {
  std::function<void(const MetricsRow&)> on_metrics;
  std::function<void()> on_best;
  // Called whenever the run reaches a state worth resuming from.
  std::function<void()> save_state;
};

RunOutcome drive(Trainer& trainer, const RunConfig& config, const DriveHooks& hooks, std::ostream& log) {
  const TrainingConfig& tc = config.training;
  trainer.on_metrics = hooks.on_metrics;
  trainer.on_best = hooks.on_best;
  auto maybe_save = [&](std::size_t step, std::size_t evaluations_before) {
    if (!hooks.save_state) return;
    const bool due = config.checkpoint_every ? step % config.checkpoint_every == 0
                                             : trainer.state().history.size() != evaluations_before;
    if (due) hooks.save_state();
  };

  RunOutcome outcome;
  const std::size_t start1 = trainer.state().step, start2 = trainer.state().stage2_step;
  if (config.stage != "stage2" && trainer.state().stage == 1) {
    while (trainer.state().step < tc.stage1_steps && !trainer.stage1_converged()) {
      const std::size_t evals = trainer.state().history.size();
      trainer.stage1_step();
      maybe_save(trainer.state().step, evals);
    }
    if (hooks.save_state) hooks.save_state();
  }
  outcome.early_stopped = trainer.stage1_converged();

  if (config.stage != "stage1") {
    if (trainer.state().stage == 1) {
      if (!tc.global_gan) {
        log << "stage 2 disabled (global_gan = false)\n";
      } else if (!outcome.early_stopped) {
        if (config.stage == "stage2") {
          throw ConfigError("stage 2 needs a resumed stage-1 state that early-stopped");
        }
        log << "stage 1 did not early-stop within " << tc.stage1_steps << " steps; stage 2 skipped\n";
      } else {
        log << "stage 1 early-stopped at step " << trainer.state().step << "; pretraining discriminators\n";
        trainer.prepare_stage2();
      }
    }
    if (trainer.state().stage == 2) {
      while (trainer.state().stage2_step < tc.stage2_steps) {
        const std::size_t evals = trainer.state().history.size();
        trainer.stage2_step();
        maybe_save(trainer.state().stage2_step, evals);
      }
      outcome.stage2_ran = true;
      if (hooks.save_state) hooks.save_state();
    }
  }
  if (trainer.state().history.empty()) trainer.evaluate();
  trainer.restore_best();
  outcome.stage1_steps = trainer.state().step - start1;
  outcome.stage2_steps = trainer.state().stage2_step - start2;
  outcome.best_round_trip = trainer.state().best_score;
  outcome.best_step = trainer.state().best_step;
  return outcome;
}

void add_run_options(CLI::App& cmd, std::string& config_file, std::vector<std::string>& sets) {
  cmd.add_option("--config", config_file, "key = value file (lowest precedence)");
  cmd.add_option("--set", sets, "key=value override (highest precedence), repeatable");
}

// ----- synth

struct SynthArgs {
  std::string out;
  CipherSpec spec;
  std::uint64_t seed = 1;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  CipherSpec spec = a.spec;
  spec.grammar_seed = a.seed + 10;
  spec.substitution_seed = a.seed + 11;
  spec.sample_seed = a.seed + 12;
  spec.embedding_seed = a.seed + 13;
  spec.validate();
  CipherData data = gen_cipher_pair(spec);

  const fs::path dir(a.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  const Vocab& vs = data.vocab_source;
  const Vocab& vt = data.vocab_target;
  write_sentences(dir / kTrainSource, data.train_source.sentences, vs);
  write_sentences(dir / kTrainTarget, data.train_target.sentences, vt);
  write_sentences(dir / kDevSource, data.dev_source.sentences, vs);
  write_sentences(dir / kDevTarget, data.dev_target.sentences, vt);
  write_sentences(dir / kTestSource, data.test.side(Lang::Source), vs);
  write_sentences(dir / kTestTarget, data.test.side(Lang::Target), vt);
  {
    auto dict = open_output(dir / kDictionary);
    for (const auto& [s, t] : data.dictionary) dict << vs.token(s) << '\t' << vt.token(t) << '\n';
  }
  write_embeddings(dir / kEmbeddings, {{&vs, &data.embeddings_source}, {&vt, &data.embeddings_target}});

  const std::size_t counts[] = {data.train_source.size(), data.train_target.size(), data.dev_source.size(),
                                data.dev_target.size(),   data.test.size(),         data.test.size(),
                                data.dictionary.size(),   vs.size() + vt.size() - 2 * Vocab::kReserved};
  const char* const kinds[] = {"sentences", "sentences", "sentences", "sentences",
                               "sentences", "sentences", "entries",   "vectors"};
  for (std::size_t i = 0; i < dataset_files().size(); ++i) {
    out << (dir / dataset_files()[i]).string() << '\t' << counts[i] << ' ' << kinds[i] << '\n';
  }
  return kExitOk;
}

// ----- train

struct TrainArgs {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::string> data, out, stage;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> share_layers;
  bool no_weight_sharing = false, no_gate = false, no_directional = false, no_local_gan = false,
       no_global_gan = false, resume = false;
};

std::map<std::string, std::string> train_overrides(const TrainArgs& a) {
  auto o = parse_assignments(a.sets);
  if (a.data) o["data"] = *a.data;
  if (a.out) o["out"] = *a.out;
  if (a.stage) o["stage"] = *a.stage;
  if (a.seed) o["seed"] = std::to_string(*a.seed);
  if (a.share_layers && a.no_weight_sharing) {
    throw ConfigError("--share-layers and --no-weight-sharing are mutually exclusive");
  }
  if (a.share_layers) o["share_layers"] = std::to_string(*a.share_layers);
  if (a.no_weight_sharing) o["share_layers"] = "0";
  if (a.no_gate) o["gate"] = "false";
  if (a.no_directional) o["directional"] = "false";
  if (a.no_local_gan) o["local_gan"] = "false";
  if (a.no_global_gan) o["global_gan"] = "false";
  return o;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err, char** env) {
  RunConfig config;
  const std::string dump = merge_run_config(config, a.config_file, env, train_overrides(a));
  if (config.out.empty()) throw ConfigError("no output directory (--out or key 'out')");
  Dataset data = load_dataset(config.data);

  const fs::path dir(config.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  open_output(dir / "config.txt") << dump;

  DualModel model = tie_parameters(config.training.model, data.embeddings[0], data.embeddings[1]);
  Trainer trainer(config.training, model, data.train[0], data.train[1], data.dev[0], data.dev[1]);

  const fs::path metrics_path = dir / "metrics.csv";
  const fs::path state_path = dir / "state.ckpt";
  const fs::path best_path = dir / "best.ckpt";
  std::size_t rows = 0;
  if (a.resume && fs::exists(state_path)) {
    Checkpoint ck = load_checkpoint(state_path);
    trainer.load_state(ck);
    rows = std::stoull(ck.meta("run.metrics_rows"));
    // Drop rows written after the checkpoint; they are about to be replayed.
    auto lines = read_lines(metrics_path);
    const std::size_t header_lines = 2;
    if (lines.size() < header_lines + rows) throw DataError("metrics file is shorter than the saved state");
    lines.resize(header_lines + rows);
    auto m = open_output(metrics_path);
    for (const auto& l : lines) m << l << '\n';
    err << "resumed from " << state_path.string() << " at stage " << trainer.state().stage << ", step "
        << trainer.state().step << '\n';
  } else {
    open_output(metrics_path) << metrics_header() << '\n';
  }
  auto metrics = open_output(metrics_path, std::ios::app);

  DriveHooks hooks;
  hooks.on_metrics = [&](const MetricsRow& r) {
    metrics << metrics_line(r) << '\n';
    metrics.flush();
    ++rows;
    if (r.round_trip) {
      err << "stage " << r.stage << " step " << r.step << ": round-trip BLEU "
          << fixed(*r.round_trip) << '\n';
    }
  };
  hooks.on_best = [&] {
    Checkpoint ck = model_checkpoint(model);
    attach_vocab(ck, data.vocab[0], data.vocab[1]);
    save_atomically(best_path, ck);
  };
  hooks.save_state = [&] {
    Checkpoint ck = trainer.state_checkpoint();
    attach_vocab(ck, data.vocab[0], data.vocab[1]);
    ck.metadata["run.metrics_rows"] = std::to_string(rows);
    save_atomically(state_path, ck);
  };

  RunOutcome r = drive(trainer, config, hooks, err);
  out << "stage 1: " << trainer.state().step << " steps" << (r.early_stopped ? " (early-stopped)" : "") << '\n';
  if (r.stage2_ran) out << "stage 2: " << trainer.state().stage2_step << " steps\n";
  out << "best round-trip BLEU " << fixed(r.best_round_trip) << " at step " << r.best_step << '\n';
  if (!fs::exists(best_path)) hooks.on_best();
  out << "wrote " << best_path.string() << ", " << state_path.string() << ", " << metrics_path.string() << '\n';
  return kExitOk;
}

// ----- translate

struct TranslateArgs {
  std::string checkpoint, input, output, direction;
  std::size_t beam = 4;
  double alpha = 0.6;
  std::size_t max_len = 100;
  bool greedy = false;
};

int cmd_translate(const TranslateArgs& a, std::ostream& out, std::ostream& err) {
  if (a.beam == 0) throw ConfigError("beam must be positive");
  Checkpoint ck = load_checkpoint(a.checkpoint);
  DualModel model = load_model(model_part(ck));
  const Lang from = parse_direction(a.direction);
  const Vocab in_vocab = checkpoint_vocab(ck, from);
  const Vocab out_vocab = checkpoint_vocab(ck, other(from));
  const auto lines = read_lines(a.input);

  err << "translate " << a.direction << ": ";
  if (a.greedy) {
    err << "greedy";
  } else {
    err << "beam=" << a.beam << ", alpha=" << a.alpha;
  }
  err << ", max_len=" << a.max_len << ", " << lines.size() << " lines\n";

  std::ofstream file;
  if (!a.output.empty()) file = open_output(a.output);
  std::ostream& sink = a.output.empty() ? out : file;
  for (const auto& line : lines) {
    const TokenSequence src = in_vocab.encode(tokenize(line));
    TokenSequence hyp;
    if (!src.empty()) {
      hyp = a.greedy ? greedy_decode(model, from, src, a.max_len)
                     : beam_search(model, from, src, a.beam, a.alpha, a.max_len);
    }
    sink << out_vocab.decode_line(hyp) << '\n';
  }
  return kExitOk;
}

// ----- evaluate

int cmd_evaluate(const std::string& hyp_path, const std::string& ref_path, std::ostream& out) {
  const auto hyp = read_lines(hyp_path);
  const auto ref = read_lines(ref_path);
  if (hyp.size() != ref.size()) {
    throw DataError("hypothesis file has " + std::to_string(hyp.size()) + " lines but reference file has " +
                    std::to_string(ref.size()));
  }
  std::vector<std::vector<std::string>> h, r;
  for (const auto& l : hyp) h.push_back(tokenize(l));
  for (const auto& l : ref) r.push_back(tokenize(l));
  out << bleu_stats(h, r).report() << '\n';
  return kExitOk;
}

// ----- roundtrip

struct RoundTripArgs {
  std::string checkpoint, data;
  std::size_t beam = 1;
  double alpha = 0.6;
  std::size_t max_len = 100;
  std::size_t size = 0;
};

int cmd_roundtrip(const RoundTripArgs& a, std::ostream& out) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  DualModel model = load_model(model_part(ck));
  const Vocab vocab[2] = {checkpoint_vocab(ck, Lang::Source), checkpoint_vocab(ck, Lang::Target)};
  std::vector<TokenSequence> dev[2];
  for (Lang lang : {Lang::Source, Lang::Target}) {
    const char* name = lang == Lang::Source ? kDevSource : kDevTarget;
    dev[index_of(lang)] = load_monolingual(fs::path(a.data) / name, vocab[index_of(lang)], lang).sentences;
    if (a.size && dev[index_of(lang)].size() > a.size) dev[index_of(lang)].resize(a.size);
  }
  const RoundTripScore s = round_trip_bleu(model, dev[0], dev[1], a.max_len, a.beam, a.alpha);
  out << "round-trip BLEU = " << fixed(s.mean) << " (s->t->s " << fixed(s.source) << ", t->s->t "
      << fixed(s.target) << ")\n";
  return kExitOk;
}

// ----- ablate

struct AblateArgs {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::string> data;
  std::string out;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t test_beam = 1;
};

struct AblationRow {
  std::string name;
  std::map<std::string, std::string> keys;
};

std::vector<AblationRow> ablation_rows(std::size_t layers) {
  std::vector<AblationRow> rows;
  for (std::size_t m = 0; m <= layers; ++m) rows.push_back({"share_layers=" + std::to_string(m), {{"share_layers", std::to_string(m)}}});
  rows.push_back({"full", {}});
  rows.push_back({"without_weight_sharing", {{"share_layers", "0"}}});
  rows.push_back({"without_embedding_reinforced_encoder", {{"gate", "false"}}});
  rows.push_back({"without_directional_self_attention", {{"directional", "false"}}});
  rows.push_back({"without_local_gans", {{"local_gan", "false"}}});
  rows.push_back({"without_global_gans", {{"global_gan", "false"}}});
  return rows;
}

int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err, char** env) {
  auto base = parse_assignments(a.sets);
  if (a.data) base["data"] = *a.data;
  RunConfig probe;
  merge_run_config(probe, a.config_file, env, base);
  Dataset data = load_dataset(probe.data);

  std::ofstream file;
  if (!a.out.empty()) file = open_output(a.out);
  std::ostream& csv = a.out.empty() ? out : file;
  csv << "config,seed,share_layers,gate,directional,local_gan,global_gan,stage1_steps,stage2_steps,"
         "round_trip_bleu,test_bleu_s2t,test_bleu_t2s,test_bleu\n";

  // Rows that resolve to the same configuration (e.g. full and m=1) share a run.
  std::map<std::string, std::string> done;
  for (const AblationRow& row : ablation_rows(probe.training.model.stack.layers)) {
    for (std::uint64_t seed : a.seeds) {
      auto keys = base;
      for (const auto& [k, v] : row.keys) keys[k] = v;
      keys["seed"] = std::to_string(seed);
      RunConfig config;
      const std::string dump = merge_run_config(config, a.config_file, env, keys);
      const TrainingConfig& tc = config.training;
      const std::string prefix = row.name + ',' + std::to_string(seed) + ',';
      if (auto it = done.find(dump); it != done.end()) {
        csv << prefix << it->second << '\n';
        continue;
      }
      err << "ablate " << row.name << " seed " << seed << '\n';
      DualModel model = tie_parameters(tc.model, data.embeddings[0], data.embeddings[1]);
      Trainer trainer(tc, model, data.train[0], data.train[1], data.dev[0], data.dev[1]);
      RunOutcome r = drive(trainer, config, {}, err);
      const Real s2t = test_bleu(model, data.test, Lang::Source, a.test_beam, tc.alpha, tc.max_len);
      const Real t2s = test_bleu(model, data.test, Lang::Target, a.test_beam, tc.alpha, tc.max_len);
      std::ostringstream cells;
      cells << tc.model.stack.shared << ',' << tc.model.use_gate << ',' << tc.model.directional << ','
            << tc.local_gan << ',' << tc.global_gan << ',' << r.stage1_steps << ',' << r.stage2_steps << ','
            << fixed(r.best_round_trip, 4) << ',' << fixed(s2t, 4) << ',' << fixed(t2s, 4) << ','
            << fixed(0.5 * (s2t + t2s), 4);
      done[dump] = cells.str();
      csv << prefix << cells.str() << '\n';
      csv.flush();
    }
  }
  return kExitOk;
}

}  // namespace

const std::vector<std::string>& dataset_files() {
  static const std::vector<std::string> files = {kTrainSource, kTrainTarget, kDevSource,  kDevTarget,
                                                 kTestSource,  kTestTarget,  kDictionary, kEmbeddings};
  return files;
}

void RunConfig::bind(KeyTable& table) {
  training.bind(table);
  table.declare("data", "dataset directory written by synth", data);
  table.declare("out", "run output directory", out);
  table.declare("stage", "stages to run: stage1, stage2 or both", stage);
  table.declare("checkpoint_every", "steps between state checkpoints (0 = after each evaluation)",
                checkpoint_every);
}

void RunConfig::validate() const {
  training.validate();
  if (stage != "stage1" && stage != "stage2" && stage != "both") {
    throw ConfigError("stage must be stage1, stage2 or both, got '" + stage + "'");
  }
  if (data.empty()) throw ConfigError("no dataset directory (--data or key 'data')");
}

std::string merge_run_config(RunConfig& config, const std::string& file, char** env,
                             const std::map<std::string, std::string>& overrides) {
  KeyTable table;
  config.bind(table);
  if (!file.empty()) table.apply_file(file);
  if (env) table.apply_environment(kEnvPrefix, env);
  table.apply(overrides, "flag");
  // One seed drives initialisation as well as training randomness.
  config.training.model.seed = config.training.seed;
  config.validate();
  return table.dump();
}

Dataset load_dataset(const fs::path& dir) {
  std::vector<std::string> missing;
  for (const auto& f : dataset_files()) {
    if (f == kDictionary) continue;
    if (!fs::exists(dir / f)) missing.push_back((dir / f).string());
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw DataError("missing input files: " + list);
  }
  Dataset d;
  const char* train_files[] = {kTrainSource, kTrainTarget};
  const char* dev_files[] = {kDevSource, kDevTarget};
  const char* test_files[] = {kTestSource, kTestTarget};
  std::vector<std::vector<std::string>> test_text[2];
  for (Lang lang : {Lang::Source, Lang::Target}) {
    const std::size_t i = index_of(lang);
    TextCorpus text = read_text_corpus(dir / train_files[i]);
    d.vocab[i] = Vocab::build(text.sentences, 1);
    d.train[i] = encode_corpus(text, d.vocab[i], lang);
    d.dev[i] = load_monolingual(dir / dev_files[i], d.vocab[i], lang);
    for (const auto& line : read_lines(dir / test_files[i])) test_text[i].push_back(tokenize(line));
    d.embeddings[i] = normalize_embeddings(load_embeddings(dir / kEmbeddings, d.vocab[i]));
  }
  if (test_text[0].size() != test_text[1].size()) {
    throw DataError("test files are not aligned: " + std::to_string(test_text[0].size()) + " vs " +
                    std::to_string(test_text[1].size()) + " lines");
  }
  for (std::size_t k = 0; k < test_text[0].size(); ++k) {
    if (test_text[0][k].empty() || test_text[1][k].empty()) continue;
    d.test.pairs.push_back({d.vocab[0].encode(test_text[0][k]), d.vocab[1].encode(test_text[1][k])});
  }
  return d;
}

void attach_vocab(Checkpoint& ck, const Vocab& source, const Vocab& target) {
  for (Lang lang : {Lang::Source, Lang::Target}) {
    const Vocab& v = lang == Lang::Source ? source : target;
    std::string tokens;
    for (std::size_t id = Vocab::kReserved; id < v.size(); ++id) {
      if (!tokens.empty()) tokens += ' ';
      tokens += v.token(static_cast<int>(id));
    }
    ck.metadata[std::string("vocab.") + lang_name(lang)] = tokens;
  }
}

Vocab checkpoint_vocab(const Checkpoint& ck, Lang lang) {
  const std::string key = std::string("vocab.") + lang_name(lang);
  if (!ck.metadata.count(key)) throw DataError("checkpoint carries no " + key + " entry");
  return Vocab::from_tokens(tokenize(ck.meta(key)));
}

double parse_bleu_report(const std::string& line) {
  double v = 0;
  if (std::sscanf(line.c_str(), "BLEU = %lf", &v) != 1) throw ParseError("not a BLEU report: " + line, 1);
  return v;
}

Real test_bleu(const DualModel& model, const ParallelCorpus& test, Lang from, std::size_t beam, Real alpha,
               std::size_t max_len) {
  if (test.empty()) throw DataError("empty test set");
  const auto inputs = test.side(from);
  const auto refs = test.side(other(from));
  return bleu(translate_corpus(model, from, inputs, beam, alpha, max_len), refs);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, char** env) {
  CLI::App app{"Unsupervised NMT with weight-shared encoders and local/global GANs"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Print help for every subcommand");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic cipher language pair");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--vocab", synth.spec.vocab_size, "per-language vocabulary size (reserved ids included)")
      ->capture_default_str();
  s->add_option("--train", synth.spec.train_size, "training sentences per language")->capture_default_str();
  s->add_option("--dev", synth.spec.dev_size, "dev sentences per language")->capture_default_str();
  s->add_option("--test", synth.spec.test_size, "aligned test pairs")->capture_default_str();
  s->add_option("--min-len", synth.spec.min_length)->capture_default_str();
  s->add_option("--max-len", synth.spec.max_length)->capture_default_str();
  s->add_option("--successors", synth.spec.successors, "bigram grammar out-degree")->capture_default_str();
  s->add_option("--dim", synth.spec.embedding_dim, "embedding dimension")->capture_default_str();
  s->add_option("--noise", synth.spec.embedding_noise, "target embedding noise norm")->capture_default_str();
  synth.spec.reorder_rate = 0.15;
  s->add_option("--reorder", synth.spec.reorder_rate, "fraction of tokens that swap with their successor")
      ->capture_default_str();
  s->add_option("--seed", synth.seed)->capture_default_str();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model; writes metrics.csv, best.ckpt and state.ckpt");
  add_run_options(*t, train.config_file, train.sets);
  t->add_option("--data", train.data, "dataset directory");
  t->add_option("--out", train.out, "output directory");
  t->add_option("--stage", train.stage, "stage1, stage2 or both")
      ->check(CLI::IsMember({"stage1", "stage2", "both"}));
  t->add_option("--seed", train.seed);
  t->add_option("--share-layers", train.share_layers, "tied layers m (default 1)");
  t->add_flag("--no-weight-sharing", train.no_weight_sharing, "m = 0");
  t->add_flag("--no-gate", train.no_gate, "plain encoder output instead of the embedding gate");
  t->add_flag("--no-directional", train.no_directional, "unmasked encoder self-attention");
  t->add_flag("--no-local-gan", train.no_local_gan, "drop the latent discriminator sub-batches");
  t->add_flag("--no-global-gan", train.no_global_gan, "skip stage 2");
  t->add_flag("--resume", train.resume, "continue from <out>/state.ckpt if present");

  TranslateArgs tr;
  auto* x = app.add_subcommand("translate", "Translate a text file line by line");
  x->add_option("--checkpoint", tr.checkpoint)->required();
  x->add_option("--input", tr.input)->required();
  x->add_option("--output", tr.output, "output file (default stdout)");
  x->add_option("--direction", tr.direction)->required()->check(CLI::IsMember({"s2t", "t2s"}));
  x->add_option("--beam", tr.beam)->capture_default_str();
  x->add_option("--alpha", tr.alpha)->capture_default_str();
  x->add_option("--max-len", tr.max_len)->capture_default_str();
  x->add_flag("--greedy", tr.greedy, "greedy decoding");

  std::string hyp, ref;
  auto* e = app.add_subcommand("evaluate", "Corpus BLEU of a hypothesis file against a reference file");
  e->add_option("hypotheses", hyp)->required();
  e->add_option("references", ref)->required();

  RoundTripArgs rt;
  auto* r = app.add_subcommand("roundtrip", "Dev-set round-trip BLEU of a checkpoint");
  r->add_option("--checkpoint", rt.checkpoint)->required();
  r->add_option("--data", rt.data, "dataset directory")->required();
  r->add_option("--beam", rt.beam)->capture_default_str();
  r->add_option("--alpha", rt.alpha)->capture_default_str();
  r->add_option("--max-len", rt.max_len)->capture_default_str();
  r->add_option("--size", rt.size, "dev sentences per language (0 = all)")->capture_default_str();

  AblateArgs ab;
  auto* b = app.add_subcommand("ablate", "Train the sharing sweep and ablation rows; writes a CSV");
  add_run_options(*b, ab.config_file, ab.sets);
  b->add_option("--data", ab.data, "dataset directory");
  b->add_option("--out", ab.out, "CSV path (default stdout)");
  b->add_option("--seeds", ab.seeds, "seeds per configuration")->delimiter(',')->capture_default_str();
  b->add_option("--test-beam", ab.test_beam, "beam for test BLEU")->capture_default_str();

  std::vector<std::string> argv_tail(args.rbegin(), args.rend());
  if (!argv_tail.empty()) argv_tail.pop_back();  // program name
  try {
    app.parse(argv_tail);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, out);
    if (t->parsed()) return cmd_train(train, out, err, env);
    if (x->parsed()) return cmd_translate(tr, out, err);
    if (e->parsed()) return cmd_evaluate(hyp, ref, out);
    if (r->parsed()) return cmd_roundtrip(rt, out);
    if (b->parsed()) return cmd_ablate(ab, out, err, env);
  } catch (const NumericError& ex) {
    err << "numeric failure: " << ex.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& ex) {
    err << "data error: " << ex.what() << '\n';
    return kExitData;
  } catch (const IoError& ex) {
    err << "i/o error: " << ex.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& ex) {
    err << "i/o error: " << ex.what() << '\n';
    return kExitData;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace unmt::cli
