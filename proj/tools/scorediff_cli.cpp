// scorediff command-line interface. Logs go to stderr; artifacts are
// written atomically and depend only on inputs, config and seeds.

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "plot_svg.hpp"
#include "scorediff/audio/beats.hpp"
#include "scorediff/data/manifest.hpp"
#include "scorediff/data/model_io.hpp"
#include "scorediff/data/tensor_io.hpp"
#include "scorediff/diffusion/gradcheck.hpp"
#include "scorediff/experiment.hpp"
#include "scorediff/metrics/originality.hpp"
#include "scorediff/metrics/quality.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace scorediff;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

/// A check that failed on valid input (validation issues, metric thresholds).
struct CheckFailed {
  std::string message;
};

/// Bad command-line arguments or environment overrides.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Context {
  RunConfig cfg;
  std::string config_path;
  std::size_t workers = 1;
  bool quiet = false;

  void log(const std::string& s) const {
    if (!quiet) std::cerr << s << "\n";
  }
};

std::size_t env_workers() {
  if (const char* w = std::getenv("HPM_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(w, &end, 10);
    if (end && *end == '\0' && v > 0) return std::size_t(v);
    throw UsageError(std::string("HPM_WORKERS must be a positive integer, got '") + w + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs f(0..n-1) on at most `workers` threads; results keep index order
/// and the lowest-index exception is rethrown.
template <class F>
auto parallel_map(std::size_t n, std::size_t workers, F&& f) {
  using R = decltype(f(std::size_t{}));
  std::vector<std::optional<R>> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        out[i].emplace(f(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t k = std::min(std::max<std::size_t>(1, workers), n);
  if (k <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < k; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<R> res;
  res.reserve(n);
  for (auto& o : out) res.push_back(std::move(*o));
  return res;
}

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file_atomic(p, text);
}

void ensure_parent(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// ---- tensors <-> domain types -------------------------------------------

Tensor<float> mel_tensor(const MelSpectrogram& m) {
  Tensor<float> t({m.frames, m.mel_bins});
  for (std::size_t i = 0; i < m.values.size(); ++i) t[i] = float(m.values[i]);
  return t;
}

MelSpectrogram tensor_mel(const Tensor<float>& t, const MelConfig& mc) {
  detail::require_shape(t.rank() == 2, "mel tensor must be [frames, bins], got " + shape_str(t.shape()));
  MelSpectrogram m;
  m.frames = t.dim(0);
  m.mel_bins = t.dim(1);
  m.fmin = mc.fmin;
  m.fmax = mc.fmax;
  m.log_floor = mc.log_floor;
  for (float v : t.values()) m.values.push_back(std::max(double(v), mc.log_floor));
  return m;
}

Tensor<float> melody_tensor(const MelodyControl& m) {
  Tensor<float> t({m.frames, kPitchClasses});
  std::copy(m.one_hot.begin(), m.one_hot.end(), t.data());
  return t;
}

MelodyControl tensor_melody(const Tensor<float>& t) {
  detail::require_shape(t.rank() == 2 && t.dim(1) == kPitchClasses, "melody tensor must be [frames, 12]");
  MelodyControl m;
  m.frames = t.dim(0);
  m.one_hot.assign(t.values().begin(), t.values().end());
  for (std::size_t f = 0; f < m.frames; ++f) {
    float s = 0;
    for (std::size_t c = 0; c < kPitchClasses; ++c) {
      const float v = m.one_hot[f * kPitchClasses + c];
      detail::require(v == 0.0f || v == 1.0f, "melody tensor must be one-hot");
      s += v;
    }
    detail::require(s <= 1.0f, "melody frame " + std::to_string(f) + " has more than one active pitch class");
  }
  return m;
}

Tensor<float> dynamics_tensor(const DynamicsControl& d) {
  Tensor<float> t({d.frames(), 1});
  for (std::size_t i = 0; i < d.frames(); ++i) t[i] = float(d.loudness_db[i]);
  return t;
}

DynamicsControl tensor_dynamics(const Tensor<float>& t) {
  detail::require_shape(t.rank() == 2 && t.dim(1) == 1, "dynamics tensor must be [frames, 1]");
  DynamicsControl d;
  for (float v : t.values()) d.loudness_db.push_back(double(v));
  return d;
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

bool has_ext(const std::string& path, const char* ext) { return fs::path(path).extension() == ext; }

// ---- manifest-backed corpus ----------------------------------------------

std::string resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return (path.is_relative() ? base / path : path).string();
}

CorpusEntry load_record(const data::ClipRecord& r, const fs::path& base, const FeatureConfig& fc) {
  detail::require(!r.audio_path.empty(), "record " + r.id + " has no audio path");
  const auto f = extract_features(read_wav(resolve(base, r.audio_path)), fc);
  CorpusEntry e;
  e.id = r.id;
  e.mel = f.mel;
  e.controls.melody = f.melody;
  e.controls.dynamics = f.dynamics;
  if (!r.frames_path.empty()) {
    const auto t = data::read_tensor(resolve(base, r.frames_path));
    detail::require_shape(t.rank() == 2, "frame embeddings of " + r.id + " must be [frames, dim]");
    e.frames.n_frames = t.dim(0);
    e.frames.dim = t.dim(1);
    e.frames.values.assign(t.values().begin(), t.values().end());
  }
  if (!r.attributes_path.empty()) {
    const auto t = data::read_tensor(resolve(base, r.attributes_path));
    e.attributes.assign(t.values().begin(), t.values().end());
  }
  e.theme = r.theme;
  e.emotion = r.emotion;
  return e;
}

std::vector<CorpusEntry> load_corpus(const Context& ctx, const std::string& manifest_path, const std::string& split) {
  const auto m = data::read_manifest(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<const data::ClipRecord*> recs;
  for (const auto& r : m.records)
    if (split == "all" || r.split == split || (r.split.empty() && split == "train")) recs.push_back(&r);
  detail::require(!recs.empty(), "manifest " + manifest_path + " has no records in split '" + split + "'");
  ctx.log("loading " + std::to_string(recs.size()) + " clips with " + std::to_string(ctx.workers) + " workers");
  return parallel_map(recs.size(), ctx.workers, [&](std::size_t i) { return load_record(*recs[i], base, ctx.cfg.features); });
}

// ---- summaries and thresholds ----------------------------------------------

json maybe(const metrics::Maybe& v) { return v ? json(*v) : json(nullptr); }

/// "name>=value" or "name<=value" against a summary record.
void check_requirements(const json& summary, const std::vector<std::string>& reqs) {
  for (const auto& r : reqs) {
    const auto ge = r.find(">="), le = r.find("<=");
    const bool is_ge = ge != std::string::npos;
    const auto pos = is_ge ? ge : le;
    if (pos == std::string::npos) throw UsageError("requirement '" + r + "' must look like name>=value or name<=value");
    const std::string key = r.substr(0, pos);
    double bound = 0;
    try {
      bound = std::stod(r.substr(pos + 2));
    } catch (const std::exception&) {
      throw UsageError("requirement '" + r + "' has no numeric bound");
    }
    if (!summary.contains(key)) throw UsageError("requirement names unknown metric '" + key + "'");
    const auto& v = summary.at(key);
    if (!v.is_number()) throw CheckFailed{"metric " + key + " is undefined"};
    const double x = v.get<double>();
    if (is_ge ? !(x >= bound) : !(x <= bound))
      throw CheckFailed{"metric " + key + " = " + std::to_string(x) + " violates " + r};
  }
}

std::string table(const std::vector<std::pair<std::string, json>>& cols) {
  std::string head, row;
  for (const auto& [name, v] : cols) {
    std::string cell = v.is_null() ? "null" : v.is_number_float() ? ([&] {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", v.get<double>());
      return std::string(buf);
    })()
                                                                  : v.is_string() ? v.get<std::string>()
                                                                                  : v.dump();
    const std::size_t w = std::max(name.size(), cell.size()) + 2;
    head += name + std::string(w - name.size(), ' ');
    row += cell + std::string(w - cell.size(), ' ');
  }
  return head + "\n" + row + "\n";
}

// ---- subcommands -----------------------------------------------------------

struct ExtractArgs {
  std::vector<std::string> inputs;
  std::string out = ".";
};

void cmd_extract(const Context& ctx, const ExtractArgs& a) {
  fs::create_directories(a.out);
  parallel_map(a.inputs.size(), ctx.workers, [&](std::size_t i) {
    const auto clip = read_wav(a.inputs[i]);
    const auto f = extract_features(clip, ctx.cfg.features);
    const auto beats = clip.duration() >= ctx.cfg.beats.min_duration ? detect_beats(clip, ctx.cfg.beats) : BeatSequence{{}, clip.duration()};
    const std::string p = (fs::path(a.out) / stem_of(a.inputs[i])).string();
    data::write_tensor(p + ".mel.hpmt", mel_tensor(f.mel));
    Tensor<float> chroma({f.chroma.frames, kPitchClasses});
    for (std::size_t k = 0; k < chroma.size(); ++k) chroma[k] = float(f.chroma.energies[k]);
    data::write_tensor(p + ".chroma.hpmt", chroma);
    data::write_tensor(p + ".melody.hpmt", melody_tensor(f.melody));
    data::write_tensor(p + ".dynamics.hpmt", dynamics_tensor(f.dynamics));
    write_text(p + ".beats.json", json{{"onsets", beats.onsets}, {"duration", beats.duration}}.dump() + "\n");
    ctx.log("extracted " + a.inputs[i] + ": " + std::to_string(f.mel.frames) + " frames, " +
            std::to_string(beats.onsets.size()) + " onsets");
    return 0;
  });
}

struct EncoderArgs {
  std::string base, frames, attributes, theme, out;
  std::size_t emotion = 0;
};

void cmd_encoder(const Context& ctx, const EncoderArgs& a) {
  std::unique_ptr<ScoreModel<float>> model;
  if (!a.base.empty()) model = data::load_model(data::read_checkpoint(a.base));
  else model = std::make_unique<ScoreModel<float>>(ctx.cfg.model);
  const auto& enc = model->film();
  const auto ft = data::read_tensor(a.frames);
  detail::require_shape(ft.rank() == 2, "frame embeddings must be [frames, dim]");
  film::FrameEmbeddingSequence seq;
  seq.n_frames = ft.dim(0);
  seq.dim = ft.dim(1);
  seq.values.assign(ft.values().begin(), ft.values().end());
  const auto at = data::read_tensor(a.attributes);
  std::vector<float> theme(model->config().film.theme_dim, 0.0f);
  if (!a.theme.empty()) {
    const auto tt = data::read_tensor(a.theme);
    theme.assign(tt.values().begin(), tt.values().end());
  }
  film::FilmInputs in;
  in.semantic = film::semantic_feature(seq);
  const double score = enc.aesthetic_score(at.values(), theme);
  in.aesthetic_bucket = enc.bucket_of(score);
  in.emotion = a.emotion;
  const auto fused = enc.fuse(enc.features(in));
  Tensor<float> c({fused.c_film.size()});
  std::copy(fused.c_film.begin(), fused.c_film.end(), c.data());
  ensure_parent(a.out);
  data::write_tensor(a.out, c);
  std::cout << json{{"aesthetic_score", score},
                    {"aesthetic_bucket", in.aesthetic_bucket},
                    {"emotion", a.emotion},
                    {"weights", {{"semantic", fused.weights[0]}, {"aesthetic", fused.weights[1]}, {"emotion", fused.weights[2]}}}}
                   .dump()
            << "\n";
}

struct TrainArgs {
  std::string manifest, codec, base, out, split = "train", lora;
  std::optional<std::size_t> steps;
};

void cmd_train_codec(const Context& ctx, const TrainArgs& a) {
  auto cfg = ctx.cfg;
  if (a.steps) cfg.codec_train.steps = *a.steps;
  const auto corpus = load_corpus(ctx, a.manifest, a.split);
  std::vector<MelSpectrogram> mels;
  for (const auto& e : corpus) mels.push_back(e.mel);
  diffusion::LatentCodec<float> codec(cfg.codec);
  const auto losses = diffusion::train_codec(codec, mels, cfg.codec_train);
  ctx.log("codec: " + std::to_string(losses.size()) + " steps, final loss " + (losses.empty() ? "n/a" : std::to_string(losses.back())) +
          ", relative L2 " + std::to_string(codec_relative_l2(codec, mels, cfg.features.mel)));
  ensure_parent(a.out);
  data::write_checkpoint(a.out, data::codec_checkpoint(codec, cfg));
}

TrainingSet training_set(const ScoreModel<float>& model, const diffusion::LatentCodec<float>& codec,
                         const std::vector<CorpusEntry>& corpus) {
  TrainingSet set;
  for (const auto& e : corpus) {
    detail::require(e.frames.n_frames > 0 && !e.attributes.empty(), "clip " + e.id + " lacks frame embeddings or attributes");
    set.latents.push_back(codec.encode(e.mel));
    set.film.push_back(film_inputs(model.film(), e));
    set.controls.push_back(&e.controls);
  }
  return set;
}

void cmd_train_base(const Context& ctx, const TrainArgs& a) {
  auto cfg = ctx.cfg;
  if (a.steps) cfg.base_steps = *a.steps;
  const auto codec = data::load_codec(data::read_checkpoint(a.codec));
  const auto corpus = load_corpus(ctx, a.manifest, a.split);
  ScoreModel<float> model(cfg.model);
  const auto set = training_set(model, codec, corpus);
  Rng batch_rng(cfg.base_train.seed + 17);
  const double loss = train_stage(model, diffusion::Stage::Base, cfg.base_train, false, cfg.base_steps, cfg.batch, set,
                                  batch_rng, [&](const std::string& s) { ctx.log(s); });
  ctx.log("base: final loss " + std::to_string(loss));
  ensure_parent(a.out);
  data::write_checkpoint(a.out, data::base_checkpoint(model, cfg));
}

void cmd_train_controlnet(const Context& ctx, const TrainArgs& a) {
  auto cfg = ctx.cfg;
  if (a.steps) cfg.branch_steps = *a.steps;
  if (!a.lora.empty()) {
    const auto comma = a.lora.find(',');
    if (comma == std::string::npos) throw UsageError("--lora expects rank,alpha");
    try {
      cfg.lora.rank = std::stoul(a.lora.substr(0, comma));
      cfg.lora.alpha = std::stod(a.lora.substr(comma + 1));
    } catch (const std::exception&) {
      throw UsageError("--lora expects rank,alpha, got '" + a.lora + "'");
    }
    cfg.use_lora = true;
  }
  const auto codec = data::load_codec(data::read_checkpoint(a.codec));
  const auto base = data::read_checkpoint(a.base);
  auto model = data::load_model(base);
  cfg.model = model->config();
  const auto corpus = load_corpus(ctx, a.manifest, a.split);
  const auto set = training_set(*model, codec, corpus);
  model->add_branch();
  if (cfg.use_lora) {
    const auto n = lora::attach_branch(*model, cfg.lora);
    const auto rep = lora::trainable_parameter_report(*model);
    ctx.log("lora: " + std::to_string(n) + " adapters, trainable " + std::to_string(rep.trainable_count) + " of " +
            std::to_string(rep.full_count) + " branch parameters (ratio " + std::to_string(rep.ratio) + ")");
  }
  Rng batch_rng(cfg.branch_train.seed + 17);
  const double loss = train_stage(*model, diffusion::Stage::Branch, cfg.branch_train, cfg.use_lora, cfg.branch_steps,
                                  cfg.batch, set, batch_rng, [&](const std::string& s) { ctx.log(s); });
  ctx.log("branch: final loss " + std::to_string(loss));
  ensure_parent(a.out);
  data::write_checkpoint(a.out, data::branch_checkpoint(*model, cfg));
}

// Full-scale audio stays well below this log-mel value; an undertrained
// decoder can exceed it by orders of magnitude.
constexpr double kLogMelCeiling = 16.0;

AudioClip safe_render(const Context& ctx, MelSpectrogram mel) {
  std::size_t clamped = 0;
  for (double& v : mel.values)
    if (v > kLogMelCeiling) {
      v = kLogMelCeiling;
      ++clamped;
    }
  if (clamped) ctx.log("warning: clamped " + std::to_string(clamped) + " log-mel values above " + std::to_string(kLogMelCeiling));
  auto clip = render_mel(mel, ctx.cfg.features);
  double peak = 0;
  for (double x : clip.samples) peak = std::max(peak, std::abs(x));
  if (peak > 1.0) {
    ctx.log("warning: rendered peak " + std::to_string(peak) + " normalized to 1");
    for (double& x : clip.samples) x /= peak;
  }
  return clip;
}

struct GenerateArgs {
  std::string codec, base, branch, mode = "score", c_film, melody, dynamics, controls_from, out, wav, plot;
  std::uint64_t seed = 0;
  std::optional<std::size_t> steps, frames;
  std::optional<double> cfg_scale;
};

void cmd_generate(const Context& ctx, const GenerateArgs& a) {
  auto gc = ctx.cfg.generate;
  if (a.steps) gc.steps = *a.steps;
  if (a.frames) gc.frames = *a.frames;
  if (a.cfg_scale) gc.cfg_scale = *a.cfg_scale;
  control::Mode mode{};
  try {
    mode = control::parse_mode(a.mode);
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
  const auto codec = data::load_codec(data::read_checkpoint(a.codec));
  const auto base = data::read_checkpoint(a.base);
  std::optional<data::Checkpoint> branch;
  if (!a.branch.empty()) branch = data::read_checkpoint(a.branch);
  const auto model = data::load_model(base, branch ? &*branch : nullptr);

  control::StyleControls given;
  if (!a.controls_from.empty()) {
    const auto f = extract_features(read_wav(a.controls_from), ctx.cfg.features);
    given.melody = f.melody;
    given.dynamics = f.dynamics;
  }
  if (!a.melody.empty()) given.melody = tensor_melody(data::read_tensor(a.melody));
  if (!a.dynamics.empty()) given.dynamics = tensor_dynamics(data::read_tensor(a.dynamics));
  if (given.melody && given.dynamics && given.melody->frames != given.dynamics->frames())
    throw ShapeError("melody and dynamics controls differ in length");
  if (mode == control::Mode::ScoreGeneration) ctx.log("mode score: local controls set to zero");

  film::FusedCondition film;
  const auto ct = data::read_tensor(a.c_film);
  detail::require_shape(ct.size() == model->config().unet.context_dim, "c_film must have " +
                                                                           std::to_string(model->config().unet.context_dim) + " values");
  film.c_film.assign(ct.values().begin(), ct.values().end());

  const auto mel = control::generate(*model, codec, film, mode, given, a.seed, gc,
                                     [&](const control::Warning& w) { ctx.log("warning: " + w.message); });
  ensure_parent(a.out);
  data::write_tensor(a.out, mel_tensor(mel));
  if (!a.wav.empty()) {
    ensure_parent(a.wav);
    write_wav(a.wav, safe_render(ctx, mel));
  }
  if (!a.plot.empty()) {
    const auto sel = control::select_controls(mode, given);
    write_text(a.plot, plot::panels(mel, sel.melody, sel.dynamics, std::string("mode: ") + control::mode_name(mode)));
  }
  ctx.log("generated " + std::to_string(mel.frames) + " frames in mode " + control::mode_name(mode));
}

struct EvaluateArgs {
  std::string suite, out, table_out, model_name = "model";
  std::vector<std::string> gen, ref, support;
  std::vector<std::size_t> labels;
  std::vector<std::string> require;
};

AudioClip load_audio(const Context& ctx, const std::string& path) {
  if (has_ext(path, ".hpmt")) return render_mel(tensor_mel(data::read_tensor(path), ctx.cfg.features.mel), ctx.cfg.features);
  return read_wav(path);
}

MelSpectrogram load_mel(const Context& ctx, const std::string& path) {
  if (has_ext(path, ".hpmt")) return tensor_mel(data::read_tensor(path), ctx.cfg.features.mel);
  return extract_features(read_wav(path), ctx.cfg.features).mel;
}

void cmd_evaluate(const Context& ctx, const EvaluateArgs& a) {
  std::vector<json> records;
  json summary;
  auto paired = [&] {
    if (a.gen.size() != a.ref.size())
      throw UsageError("suite " + a.suite + " pairs --gen with --ref; got " + std::to_string(a.gen.size()) + " and " +
                           std::to_string(a.ref.size()) + " files");
    detail::require(!a.gen.empty(), "no inputs to evaluate");
  };

  if (a.suite == "rhythm") {
    paired();
    auto beats = [&](const std::string& p) { return detect_beats(load_audio(ctx, p), ctx.cfg.beats); };
    const auto cov = parallel_map(a.gen.size(), ctx.workers, [&](std::size_t i) {
      return metrics::beats_coverage(beats(a.gen[i]), beats(a.ref[i]), ctx.cfg.coverage);
    });
    for (std::size_t i = 0; i < cov.size(); ++i)
      records.push_back({{"gen", a.gen[i]}, {"ref", a.ref[i]}, {"matched", cov[i].matched}, {"bcs", cov[i].bcs},
                         {"bhs", cov[i].bhs}, {"f1", cov[i].f1}});
    const auto r = metrics::rhythm_stats(cov);
    summary = {{"suite", "rhythm"}, {"clips", r.clips}, {"bcs", r.bcs}, {"bhs", r.bhs},
               {"f1", r.f1},        {"csd", maybe(r.csd)}, {"hsd", maybe(r.hsd)}};
  } else if (a.suite == "quality") {
    detail::require(a.gen.size() >= 2 && a.ref.size() >= 2, "quality needs at least two generated and two reference clips");
    const auto g = parallel_map(a.gen.size(), ctx.workers, [&](std::size_t i) { return load_mel(ctx, a.gen[i]); });
    const auto r = parallel_map(a.ref.size(), ctx.workers, [&](std::size_t i) { return load_mel(ctx, a.ref[i]); });
    const auto q = metrics::quality_report(g, r);
    summary = {{"suite", "quality"}, {"generated", g.size()}, {"reference", r.size()}, {"fad", q.fad}, {"kl", q.kl}, {"is", q.is}};
  } else if (a.suite == "style") {
    paired();
    struct Pair {
      metrics::Maybe acc;
      std::size_t agree = 0, voiced = 0;
      metrics::DynamicsPair dyn;
    };
    const auto pairs = parallel_map(a.gen.size(), ctx.workers, [&](std::size_t i) {
      const auto g = extract_features(load_audio(ctx, a.gen[i]), ctx.cfg.features);
      const auto r = extract_features(load_audio(ctx, a.ref[i]), ctx.cfg.features);
      Pair p;
      p.acc = metrics::melody_accuracy(r.melody, g.melody);
      for (std::size_t t = 0; t < std::min(r.melody.frames, g.melody.frames); ++t) {
        const int x = r.melody.pitch_at(t), y = g.melody.pitch_at(t);
        if (x < 0 || y < 0) continue;
        ++p.voiced;
        p.agree += x == y;
      }
      p.dyn = metrics::align(r.dynamics, g.dynamics);
      return p;
    });
    std::vector<metrics::DynamicsPair> dyn;
    std::size_t agree = 0, voiced = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto r = metrics::dynamics_correlation({pairs[i].dyn});
      records.push_back({{"gen", a.gen[i]}, {"ref", a.ref[i]}, {"melody_acc", maybe(pairs[i].acc)}, {"dyn_corr", maybe(r.micro)}});
      dyn.push_back(pairs[i].dyn);
      agree += pairs[i].agree;
      voiced += pairs[i].voiced;
    }
    const auto dc = metrics::dynamics_correlation(dyn);
    summary = {{"suite", "style"},
               {"pairs", pairs.size()},
               {"melody_acc", voiced ? json(double(agree) / double(voiced)) : json(nullptr)},
               {"dyn_corr_micro", maybe(dc.micro)},
               {"dyn_corr_macro", maybe(dc.macro)}};
  } else if (a.suite == "originality") {
    detail::require(a.labels.size() == a.gen.size(), "--labels needs one class index per --gen file");
    detail::require(!a.support.empty(), "--support needs one file per class");
    metrics::ToyAudioEmbedder emb;
    const auto ge = parallel_map(a.gen.size(), ctx.workers, [&](std::size_t i) { return emb.embed(load_mel(ctx, a.gen[i])); });
    const auto se = parallel_map(a.support.size(), ctx.workers, [&](std::size_t i) { return emb.embed(load_mel(ctx, a.support[i])); });
    std::vector<std::vector<metrics::Embedding>> classes(a.support.size());
    std::vector<metrics::LabeledEmbedding> queries;
    for (std::size_t i = 0; i < ge.size(); ++i) {
      detail::require(a.labels[i] < a.support.size(), "label " + std::to_string(a.labels[i]) + " has no support file");
      classes[a.labels[i]].push_back(ge[i]);
      queries.push_back({ge[i], a.labels[i]});
    }
    const auto o = metrics::originality(classes);
    metrics::ModelPoint pt;
    pt.model = a.model_name;
    pt.class_originality = o.per_class;
    pt.originality = o.sigma_rho / double(o.per_class.size());
    pt.recognizability = metrics::recognizability(queries, se);
    for (std::size_t c = 0; c < classes.size(); ++c) {
      std::vector<metrics::LabeledEmbedding> qc;
      for (const auto& q : queries)
        if (q.label == c) qc.push_back(q);
      pt.class_recognizability.push_back(metrics::recognizability(qc, se));
      records.push_back({{"class", c}, {"dispersion", o.per_class[c]}, {"recognizability", pt.class_recognizability.back()}});
    }
    summary = {{"suite", "originality"}, {"model", a.model_name}, {"sigma_rho", o.sigma_rho},
               {"originality", pt.originality}, {"recognizability", pt.recognizability}};
    if (!a.table_out.empty()) write_text(a.table_out, metrics::originality_table({pt}));
  } else {
    throw UsageError("unknown suite '" + a.suite + "' (expected rhythm|quality|style|originality)");
  }

  std::string lines;
  for (const auto& r : records) lines += r.dump() + "\n";
  lines += summary.dump() + "\n";
  if (!a.out.empty()) write_text(a.out, lines);
  std::vector<std::pair<std::string, json>> cols;
  for (const auto& [k, v] : summary.items())
    if (k != "suite") cols.emplace_back(k, v);
  std::cout << table(cols);
  check_requirements(summary, a.require);
}

struct DatasetArgs {
  std::string manifest, segments, out, split_tag;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> clips;
  bool no_paths = false, expect_split = false;
};

void cmd_dataset_synth(const Context& ctx, const DatasetArgs& a) {
  auto sc = ctx.cfg.synth;
  if (a.clips) sc.clips = *a.clips;
  if (a.seed) sc.seed = *a.seed;
  const fs::path dir(a.out);
  for (const char* sub : {"audio", "frames", "attributes"}) fs::create_directories(dir / sub);
  static const char* style_names[] = {"lyrical", "agitato", "ambient", "ostinato"};
  const auto notes = data::note_table(ctx.cfg.features.mel, ctx.cfg.codec.ratio);
  film::ToyEmbeddingProvider provider;
  data::Manifest m;
  m.config_digest = digest_hex(config_digest(ctx.cfg));
  m.clip_seconds = double((sc.frames - 1) * sc.hop) / double(sc.sample_rate);
  const auto recs = parallel_map(sc.clips, ctx.workers, [&](std::size_t i) {
    const auto c = data::synth_clip(i, sc, notes);
    write_wav(dir / "audio" / (c.id + ".wav"), c.audio);
    const auto emb = provider.embed(c.video, 1.0);
    Tensor<float> ft({emb.n_frames, emb.dim});
    std::copy(emb.values.begin(), emb.values.end(), ft.data());
    data::write_tensor((dir / "frames" / (c.id + ".hpmt")).string(), ft);
    Tensor<float> at({film::kAestheticFrames, film::kAestheticAttributes});
    std::copy(c.attributes.begin(), c.attributes.end(), at.data());
    data::write_tensor((dir / "attributes" / (c.id + ".hpmt")).string(), at);
    data::ClipRecord r;
    r.id = c.id;
    r.film_title = "synthetic";
    r.composer = "synth";
    r.styles = {style_names[c.style % 4]};
    r.source_segment = c.id;
    r.start = 0;
    r.end = m.clip_seconds;
    r.audio_path = "audio/" + c.id + ".wav";
    r.frames_path = "frames/" + c.id + ".hpmt";
    r.attributes_path = "attributes/" + c.id + ".hpmt";
    r.emotion = c.emotion;
    r.theme = c.theme;
    return r;
  });
  m.records = recs;
  data::write_manifest((dir / "manifest.jsonl").string(), m);
  ctx.log("wrote " + std::to_string(m.records.size()) + " synthetic clips to " + a.out);
}

void cmd_dataset_segment(const Context& ctx, const DatasetArgs& a) {
  std::istringstream in(read_file(a.segments));
  std::vector<data::RawSegment> raw;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      data::RawSegment s;
      s.id = j.at("id").get<std::string>();
      s.duration = j.at("duration").get<double>();
      s.film_title = j.value("film_title", "");
      s.composer = j.value("composer", "");
      s.styles = j.value("styles", std::vector<std::string>{});
      s.audio_path = j.value("audio_path", "");
      raw.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw FormatError(a.segments + ": " + e.what());
    }
  }
  data::Manifest m;
  m.config_digest = digest_hex(config_digest(ctx.cfg));
  m.clip_seconds = ctx.cfg.split.clip_seconds;
  m.records = data::segment_clips(raw, m.clip_seconds);
  ctx.log(std::to_string(raw.size()) + " segments -> " + std::to_string(m.records.size()) + " clips");
  write_text(a.out, data::encode_manifest(m));
}

void cmd_dataset_split(const Context& ctx, const DatasetArgs& a) {
  auto sc = ctx.cfg.split;
  if (a.seed) sc.seed = *a.seed;
  auto m = data::split_dataset(data::read_manifest(a.manifest), sc);
  m.config_digest = digest_hex(config_digest(ctx.cfg));
  const auto s = data::dataset_stats(m);
  ctx.log("split: train " + std::to_string(s.splits.count("train") ? s.splits.at("train") : 0) + ", val " +
          std::to_string(s.splits.count("val") ? s.splits.at("val") : 0) + ", test " +
          std::to_string(s.splits.count("test") ? s.splits.at("test") : 0));
  write_text(a.out, data::encode_manifest(m));
}

void cmd_dataset_validate(const Context& ctx, const DatasetArgs& a) {
  const auto m = data::read_manifest(a.manifest);
  data::ValidateOptions opt;
  opt.base_dir = fs::path(a.manifest).parent_path().string();
  opt.check_paths = !a.no_paths;
  if (a.expect_split) opt.expected_split = ctx.cfg.split;
  const auto issues = data::validate_manifest(m, opt);
  for (const auto& i : issues) std::cout << json{{"record", i.record}, {"kind", i.kind}, {"message", i.message}}.dump() << "\n";
  if (!issues.empty()) throw CheckFailed{std::to_string(issues.size()) + " manifest issue(s)"};
  ctx.log("manifest ok: " + std::to_string(m.records.size()) + " records");
}

void cmd_dataset_stats(const Context&, const DatasetArgs& a) {
  const auto s = data::dataset_stats(data::read_manifest(a.manifest));
  json emotions = json::object();
  for (const auto& [k, v] : s.emotions) emotions[std::to_string(k)] = v;
  std::cout << json{{"clips", s.clips}, {"total_seconds", s.total_seconds}, {"styles", s.styles},
                    {"composers", s.composers}, {"splits", s.splits}, {"emotions", emotions}}
                   .dump(2)
            << "\n";
}

struct PlotArgs {
  std::string mel, wav, melody, dynamics, out, title;
};

void cmd_plot(const Context& ctx, const PlotArgs& a) {
  MelSpectrogram mel;
  std::optional<MelodyControl> melody;
  std::optional<DynamicsControl> dynamics;
  if (!a.wav.empty()) {
    const auto f = extract_features(read_wav(a.wav), ctx.cfg.features);
    mel = f.mel;
    melody = f.melody;
    dynamics = f.dynamics;
  } else {
    if (a.mel.empty()) throw UsageError("plot needs --mel or --wav");
    mel = tensor_mel(data::read_tensor(a.mel), ctx.cfg.features.mel);
  }
  if (!a.melody.empty()) melody = tensor_melody(data::read_tensor(a.melody));
  if (!a.dynamics.empty()) dynamics = tensor_dynamics(data::read_tensor(a.dynamics));
  write_text(a.out, plot::panels(mel, melody, dynamics, a.title));
}

struct GradcheckArgs {
  std::size_t samples = 150;
  std::uint64_t seed = 1;
  double tolerance = 1e-3;
  std::string base;
};

void cmd_gradcheck(const Context& ctx, const GradcheckArgs& a) {
  diffusion::ModelGradCheckConfig g;
  g.samples = a.samples;
  g.seed = a.seed;
  std::unique_ptr<ScoreModel<float>> trained;
  auto mcfg = ctx.cfg.model;
  if (!a.base.empty()) {
    trained = data::load_model(data::read_checkpoint(a.base));
    mcfg = trained->config();
  }
  const auto rep = diffusion::model_gradient_check(mcfg, g, trained ? &trained->store() : nullptr);
  std::cout << json{{"checked", rep.checked}, {"max_rel_error", rep.max_rel_error}, {"worst", rep.worst}, {"tolerance", a.tolerance}}.dump()
            << "\n";
  if (!(rep.max_rel_error < a.tolerance)) throw CheckFailed{"gradient check failed: " + rep.worst};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scorediff: controllable film-score diffusion toolkit"};
  app.require_subcommand(1);
  Context ctx;
  std::optional<std::size_t> workers;
  app.add_option("--config", ctx.config_path, "run configuration JSON (default: $HPM_CONFIG)");
  app.add_option("--workers", workers, "worker threads (default: $HPM_WORKERS or hardware)")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", ctx.quiet, "suppress progress logs");

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "spectrograms, controls and beats from WAV files");
  extract->add_option("inputs", ex.inputs, "WAV files")->required()->check(CLI::ExistingFile);
  extract->add_option("-o,--out", ex.out, "output directory");

  EncoderArgs en;
  auto* encoder = app.add_subcommand("encoder", "film features and fused condition c_film");
  encoder->add_option("--base", en.base, "base checkpoint providing film encoder weights");
  encoder->add_option("--frames", en.frames, "frame embeddings tensor [frames, dim]")->required();
  encoder->add_option("--attributes", en.attributes, "aesthetic attributes tensor")->required();
  encoder->add_option("--theme", en.theme, "theme embedding tensor");
  encoder->add_option("--emotion", en.emotion, "emotion class index");
  encoder->add_option("-o,--out", en.out, "c_film tensor")->required();

  TrainArgs tc, tb, tn;
  auto* train_codec = app.add_subcommand("train-codec", "train the mel latent codec");
  auto* train_base = app.add_subcommand("train-base", "train the film encoder and base denoiser");
  auto* train_cn = app.add_subcommand("train-controlnet", "train the control branch (optionally LoRA)");
  for (auto [sub, args] : {std::pair{train_codec, &tc}, std::pair{train_base, &tb}, std::pair{train_cn, &tn}}) {
    sub->add_option("--manifest", args->manifest, "clip manifest")->required();
    sub->add_option("--split", args->split, "records to use: train, val, test or all");
    sub->add_option("--steps", args->steps, "optimizer steps (overrides config)");
    sub->add_option("-o,--out", args->out, "output checkpoint")->required();
  }
  train_base->add_option("--codec", tb.codec, "codec checkpoint")->required();
  train_cn->add_option("--codec", tn.codec, "codec checkpoint")->required();
  train_cn->add_option("--base", tn.base, "base checkpoint")->required();
  train_cn->add_option("--lora", tn.lora, "train LoRA adapters: rank,alpha");

  GenerateArgs ge;
  auto* generate = app.add_subcommand("generate", "sample a mel spectrogram");
  generate->add_option("--codec", ge.codec, "codec checkpoint")->required();
  generate->add_option("--base", ge.base, "base checkpoint")->required();
  generate->add_option("--branch", ge.branch, "control branch checkpoint");
  generate->add_option("--mode", ge.mode, "score | melody | dynamics | both");
  generate->add_option("--c-film", ge.c_film, "fused film condition tensor")->required();
  generate->add_option("--melody", ge.melody, "melody control tensor [frames, 12]");
  generate->add_option("--dynamics", ge.dynamics, "dynamics control tensor [frames, 1] in dB");
  generate->add_option("--controls-from", ge.controls_from, "extract both controls from this WAV");
  generate->add_option("--seed", ge.seed, "sampling seed");
  generate->add_option("--steps", ge.steps, "DDIM steps");
  generate->add_option("--cfg", ge.cfg_scale, "classifier-free guidance scale");
  generate->add_option("--frames", ge.frames, "frames when no control fixes the length");
  generate->add_option("-o,--out", ge.out, "mel tensor output")->required();
  generate->add_option("--wav", ge.wav, "also render audio (Griffin-Lim)");
  generate->add_option("--plot", ge.plot, "also write an SVG panel figure");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "objective metrics");
  evaluate->add_option("--suite", ev.suite, "rhythm | quality | style | originality")->required();
  evaluate->add_option("--gen", ev.gen, "generated WAV or mel tensor files")->required();
  evaluate->add_option("--ref", ev.ref, "reference files (paired for rhythm/style)");
  evaluate->add_option("--support", ev.support, "one support file per class (originality)");
  evaluate->add_option("--labels", ev.labels, "class index per --gen file (originality)");
  evaluate->add_option("--model", ev.model_name, "model name for the originality table");
  evaluate->add_option("--table", ev.table_out, "originality/recognizability TSV output");
  evaluate->add_option("-o,--out", ev.out, "JSON-lines records output");
  evaluate->add_option("--require", ev.require, "fail unless metric>=x or metric<=x");

  DatasetArgs ds;
  auto* dataset = app.add_subcommand("dataset", "manifest tools");
  dataset->require_subcommand(1);
  auto* d_synth = dataset->add_subcommand("synth", "write the synthetic corpus and its manifest");
  d_synth->add_option("-o,--out", ds.out, "output directory")->required();
  d_synth->add_option("--clips", ds.clips, "number of clips");
  d_synth->add_option("--seed", ds.seed, "corpus seed");
  auto* d_segment = dataset->add_subcommand("segment", "cut raw segments into fixed-length clips");
  d_segment->add_option("--segments", ds.segments, "JSON-lines segments with id and duration")->required();
  d_segment->add_option("-o,--out", ds.out, "output manifest")->required();
  auto* d_split = dataset->add_subcommand("split", "assign train/val/test tags");
  d_split->add_option("--manifest", ds.manifest, "input manifest")->required();
  d_split->add_option("--seed", ds.seed, "shuffle seed");
  d_split->add_option("-o,--out", ds.out, "output manifest")->required();
  auto* d_validate = dataset->add_subcommand("validate", "check ids, durations, paths and split sizes");
  d_validate->add_option("--manifest", ds.manifest, "manifest")->required();
  d_validate->add_flag("--no-paths", ds.no_paths, "skip file existence checks");
  d_validate->add_flag("--expect-split", ds.expect_split, "require split sizes to follow the configured ratios");
  auto* d_stats = dataset->add_subcommand("stats", "clip counts and label histograms");
  d_stats->add_option("--manifest", ds.manifest, "manifest")->required();

  PlotArgs pl;
  auto* plotc = app.add_subcommand("plot", "SVG panels: spectrogram, melody strip, dynamics curve");
  plotc->add_option("--mel", pl.mel, "mel tensor");
  plotc->add_option("--wav", pl.wav, "WAV file (plots extracted controls)");
  plotc->add_option("--melody", pl.melody, "melody control tensor");
  plotc->add_option("--dynamics", pl.dynamics, "dynamics control tensor");
  plotc->add_option("--title", pl.title, "figure title");
  plotc->add_option("-o,--out", pl.out, "SVG output")->required();

  GradcheckArgs gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the model gradients");
  gradcheck->add_option("--samples", gc.samples, "parameters to probe");
  gradcheck->add_option("--seed", gc.seed, "sampling seed");
  gradcheck->add_option("--tolerance", gc.tolerance, "maximum relative error");
  gradcheck->add_option("--base", gc.base, "check at trained base weights");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (ctx.config_path.empty())
      if (const char* env = std::getenv("HPM_CONFIG")) ctx.config_path = env;
    if (!ctx.config_path.empty()) ctx.cfg = load_run_config(ctx.config_path);
    ctx.workers = workers ? *workers : env_workers();
    ctx.log("config digest " + digest_hex(config_digest(ctx.cfg)) +
            (ctx.config_path.empty() ? " (defaults)" : " (" + ctx.config_path + ")"));

    if (*extract) cmd_extract(ctx, ex);
    else if (*encoder) cmd_encoder(ctx, en);
    else if (*train_codec) cmd_train_codec(ctx, tc);
    else if (*train_base) cmd_train_base(ctx, tb);
    else if (*train_cn) cmd_train_controlnet(ctx, tn);
    else if (*generate) cmd_generate(ctx, ge);
    else if (*evaluate) cmd_evaluate(ctx, ev);
    else if (*d_synth) cmd_dataset_synth(ctx, ds);
    else if (*d_segment) cmd_dataset_segment(ctx, ds);
    else if (*d_split) cmd_dataset_split(ctx, ds);
    else if (*d_validate) cmd_dataset_validate(ctx, ds);
    else if (*d_stats) cmd_dataset_stats(ctx, ds);
    else if (*plotc) cmd_plot(ctx, pl);
    else if (*gradcheck) cmd_gradcheck(ctx, gc);
    return kExitOk;
  } catch (const CheckFailed& e) {
    std::cerr << "failed: " << e.message << "\n";
    return kExitFailure;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}
