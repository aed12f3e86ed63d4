// oodtrack: command-line driver for the detection, tracking, retrieval and
// evaluation pipeline. Every stage reads and writes `<stage>.json` files in a
// run directory.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oodtrack/pipeline.hpp"
#include "oodtrack/synth.hpp"

namespace fs = std::filesystem;
using namespace oodtrack;

namespace {

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::UnknownOp:
      return 1;
    case ErrorCode::NoConvergence:
    case ErrorCode::PerplexityTooLarge:
    case ErrorCode::DegenerateData:
      return 3;
    default:
      return 2;
  }
}

int fail(const std::string& error, const std::string& message, int exitCode) {
  Json j = Json::object();
  j["error"] = error;
  j["message"] = message;
  j["exitCode"] = exitCode;
  std::cerr << j.dump() << std::endl;
  return exitCode;
}

void write_stage(const fs::path& run, const std::string& stage, const Json& j) {
  write_text(run / (stage + ".json"), dump_json(j));
}

bool has_stage(const fs::path& run, const std::string& stage) { return fs::exists(run / (stage + ".json")); }

Json read_stage(const fs::path& run, const std::string& stage) {
  const fs::path p = run / (stage + ".json");
  if (!fs::exists(p)) throw Error(ErrorCode::IoError, "missing stage file " + p.string());
  return parse_json(read_text(p), p.string());
}

Json stage_header(const std::string& stage) {
  Json j = Json::object();
  j["schemaVersion"] = kSchemaVersion;
  j["stage"] = stage;
  return j;
}

Json sequences_to_json(const std::vector<SequencePrediction>& seqs, bool withTracks) {
  Json a = Json::array();
  for (const auto& s : seqs) a.push_back(sequence_to_json(s, withTracks));
  return a;
}

std::vector<SequencePrediction> sequences_from_stage(const Json& j) {
  std::vector<SequencePrediction> out;
  try {
    for (const Json& s : j.at("sequences")) out.push_back(sequence_from_json(s));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("stage sequences: ") + e.what());
  }
  return out;
}

std::string absolute_string(const std::string& p) { return fs::weakly_canonical(fs::absolute(p)).string(); }

/// Explicit --manifest wins; otherwise the path recorded by an earlier stage.
std::string manifest_path(const std::string& flag, const fs::path& run) {
  if (!flag.empty()) return absolute_string(flag);
  for (const char* stage : {"detect", "track", "meta-apply", "embed"})
    if (has_stage(run, stage)) {
      const Json j = read_stage(run, stage);
      if (j.contains("manifest")) return j["manifest"].get<std::string>();
    }
  throw Error(ErrorCode::InvalidArgument, "no --manifest given and none recorded in " + run.string());
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "not a number list: " + s);
    }
  }
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "empty number list");
  return out;
}

Json tracker_config_to_json(const TrackerConfig& c) {
  Json j = Json::object();
  j["aggregationDist"] = c.aggregationDist;
  j["centerDist"] = c.centerDist;
  j["minIoU"] = c.minIoU;
  j["regressionWindow"] = c.regressionWindow;
  j["maxGap"] = c.maxGap;
  j["relativeToDiagonal"] = c.relativeToDiagonal;
  return j;
}

ProtocolResult protocol_from_stage(const Json& j) {
  ProtocolResult r;
  try {
    r.protocol = parse_protocol(j.at("protocol").get<std::string>());
    for (const Json& m : j.at("models")) r.models.push_back({m.at("heldOut").get<std::string>(), meta_model_from_json(m.at("model"))});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("meta-train stage: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  int objects = 3;
  int frames = 20;
  int size = 64;
  int sequences = 1;
  double sigma = 0.0;
  double fpRate = 0.0;
  double dropProb = 0.0;
  int labeledEvery = 1;
};

int run_synth(const SynthArgs& a) {
  std::vector<SynthConfig> configs;
  if (!a.config.empty()) {
    const Json j = parse_json(read_text(a.config), a.config);
    if (j.contains("sequences")) {
      for (const Json& s : j.at("sequences")) configs.push_back(synth_config_from_json(s));
    } else {
      configs.push_back(synth_config_from_json(j));
    }
  } else {
    for (int k = 0; k < a.sequences; ++k) {
      SynthConfig c = synth_preset(mix_seed(a.seed, static_cast<std::uint64_t>(k)), a.objects, a.frames, a.size);
      c.sequenceId = "seq" + std::to_string(k);
      c.scoreNoiseSigma = a.sigma;
      c.fpBlobRate = a.fpRate;
      c.dropDetectionProb = a.dropProb;
      c.labeledEvery = a.labeledEvery;
      configs.push_back(c);
    }
  }
  const DatasetManifest m = generate_dataset(configs, a.out);
  Json j = stage_header("synth");
  j["manifest"] = absolute_string((fs::path(a.out) / "manifest.json").string());
  j["configs"] = Json::array();
  for (const auto& c : configs) j["configs"].push_back(synth_config_to_json(c));
  write_stage(a.out, "synth", j);
  std::cout << "synth: " << m.sequences.size() << " sequence(s) written to " << a.out << "\n";
  return 0;
}

struct PerturbArgs {
  std::string op;
  std::string manifest;
  std::string run;
  std::string out;
  std::vector<std::string> drops;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  std::string sequence;
  int track = 0;
  int fromFrame = 0;
};

int run_perturb(const PerturbArgs& a) {
  const PerturbOp op = parse_perturb_op(a.op);
  if (op == PerturbOp::SwapTrackIds) {
    if (a.run.empty()) throw Error(ErrorCode::InvalidArgument, "swapTrackIds needs --run");
    Json j = read_stage(a.run, "track");
    std::vector<SequencePrediction> seqs = sequences_from_stage(j);
    bool found = false;
    for (auto& s : seqs)
      if (s.sequenceId == a.sequence) {
        const int fresh = perturb_swap_track_id(s, a.track, a.fromFrame);
        std::cout << "perturb: track " << a.track << " of " << a.sequence << " continues as " << fresh << " from frame "
                  << a.fromFrame << "\n";
        found = true;
      }
    if (!found) throw Error(ErrorCode::InvalidArgument, "no sequence " + a.sequence);
    j["sequences"] = sequences_to_json(seqs, true);
    j["perturbation"] = {{"op", a.op}, {"sequence", a.sequence}, {"track", a.track}, {"fromFrame", a.fromFrame}};
    write_stage(a.out, "track", j);
    return 0;
  }
  if (a.manifest.empty()) throw Error(ErrorCode::InvalidArgument, a.op + " needs --manifest");
  const DatasetManifest m = read_manifest(a.manifest);
  if (op == PerturbOp::DropFrames) {
    std::vector<DropSpec> specs;
    for (const std::string& d : a.drops) {
      const auto c1 = d.find(':');
      const auto c2 = d.rfind(':');
      if (c1 == std::string::npos || c1 == c2) throw Error(ErrorCode::InvalidArgument, "drop must be seq:frame:instance");
      try {
        specs.push_back({d.substr(0, c1), std::stoi(d.substr(c1 + 1, c2 - c1 - 1)), std::stoi(d.substr(c2 + 1))});
      } catch (const std::exception&) {
        throw Error(ErrorCode::InvalidArgument, "drop must be seq:frame:instance");
      }
    }
    perturb_drop_detections(m, specs, a.out);
  } else {
    perturb_jitter_scores(m, a.sigma, a.seed, a.out);
  }
  std::cout << "perturb: " << a.op << " manifest written to " << (fs::path(a.out) / "manifest.json").string() << "\n";
  return 0;
}

struct DetectArgs {
  std::string manifest;
  std::string run;
  std::optional<double> tau;
  std::size_t minSize = 1;
  std::string roi = "auto";
  std::string tauSweep;
};

int run_detect(const DetectArgs& a) {
  const DatasetManifest m = read_manifest(a.manifest);
  DetectOptions opts;
  opts.minSize = a.minSize;
  opts.roi = parse_roi_mode(a.roi);
  Json j = stage_header("detect");
  j["manifest"] = absolute_string(a.manifest);
  if (!a.tauSweep.empty()) {
    const auto rows = sweep_tau(m, parse_double_list(a.tauSweep), a.minSize, opts.roi);
    Json sweep = Json::array();
    const TauSweepRow* best = &rows.front();
    for (const auto& r : rows) {
      sweep.push_back({{"tau", r.tau}, {"f1Bar", r.f1Bar}});
      if (r.f1Bar > best->f1Bar) best = &r;
    }
    opts.tau = best->tau;
    j["tauSweep"] = {{"objective", "f1Bar"}, {"rows", sweep}};
    std::cout << "detect: tau = " << format_double(opts.tau) << " (best F1-bar of sweep)\n";
  } else if (a.tau) {
    opts.tau = *a.tau;
    std::cout << "detect: tau = " << format_double(opts.tau) << "\n";
  } else {
    std::cout << "detect: tau = " << format_double(kDefaultTauSos) << " (SOS default)\n";
  }
  const auto seqs = detect_dataset(m, opts);
  j["tau"] = opts.tau;
  j["minSize"] = opts.minSize;
  j["roi"] = roi_mode_name(opts.roi);
  j["sequences"] = sequences_to_json(seqs, false);
  write_stage(a.run, "detect", j);
  std::size_t count = 0;
  for (const auto& s : seqs)
    for (const auto& f : s.frames) count += f.size();
  std::cout << "detect: " << count << " segment(s) in " << seqs.size() << " sequence(s)\n";
  return 0;
}

struct MetaArgs {
  std::string manifest;
  std::string run;
  std::string protocol = "M1";
  std::optional<double> lambda;
  std::string trainManifest;
  double decisionThreshold = 0.5;
};

int run_meta_train(const MetaArgs& a) {
  const std::string mpath = manifest_path(a.manifest, a.run);
  const DatasetManifest m = read_manifest(mpath);
  const Json det = read_stage(a.run, "detect");
  const auto detections = sequences_from_stage(det);
  DetectOptions dopts;
  dopts.tau = det.at("tau").get<double>();
  dopts.minSize = det.at("minSize").get<std::size_t>();
  dopts.roi = parse_roi_mode(det.at("roi").get<std::string>());

  const Protocol protocol = parse_protocol(a.protocol);
  const MetaDataset dsA = build_meta_dataset(m, detections, dopts.roi);
  std::optional<MetaDataset> dsB;
  if (protocol == Protocol::M2) {
    if (a.trainManifest.empty()) throw Error(ErrorCode::TooFewSequences, "protocol M2 needs --train-manifest");
    const DatasetManifest mb = read_manifest(a.trainManifest);
    dsB = build_meta_dataset(mb, detect_dataset(mb, dopts), dopts.roi);
  }
  TrainOptions topts;
  topts.decisionThreshold = a.decisionThreshold;
  const ProtocolResult r = run_protocol(dsA, dsB ? &*dsB : nullptr, protocol, a.lambda, topts);

  Json j = stage_header("meta-train");
  j["protocol"] = protocol_name(protocol);
  j["lambda"] = a.lambda ? Json(*a.lambda) : Json();
  if (dsB) j["trainManifest"] = absolute_string(a.trainManifest);
  j["models"] = Json::array();
  for (const auto& fm : r.models) j["models"].push_back({{"heldOut", fm.heldOut}, {"model", meta_model_to_json(fm.model)}});
  Json eval = Json::array();
  for (const auto& seq : dsA.sequences) {
    const auto& probs = r.probabilities.at(seq.sequenceId);
    const double thr = r.model_for(seq.sequenceId).decisionThreshold;
    std::vector<bool> truth, pred;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < seq.samples.size(); ++i) {
      truth.push_back(seq.samples[i].tp);
      pred.push_back(probs[i] >= thr);
      correct += truth.back() == pred.back();
    }
    Json e = Json::object();
    e["sequenceId"] = seq.sequenceId;
    e["samples"] = seq.samples.size();
    e["accuracy"] = seq.samples.empty() ? Json() : Json(static_cast<double>(correct) / static_cast<double>(seq.samples.size()));
    e["f1"] = classification_f1(truth, pred);
    eval.push_back(std::move(e));
  }
  j["evaluation"] = std::move(eval);
  write_stage(a.run, "meta-train", j);
  std::cout << "meta-train: protocol " << protocol_name(protocol) << ", " << r.models.size() << " model(s)\n";
  return 0;
}

int run_meta_apply(const MetaArgs& a) {
  const std::string mpath = manifest_path(a.manifest, a.run);
  const DatasetManifest m = read_manifest(mpath);
  const Json det = read_stage(a.run, "detect");
  const auto detections = sequences_from_stage(det);
  const ProtocolResult models = protocol_from_stage(read_stage(a.run, "meta-train"));
  const auto kept = apply_meta_dataset(m, detections, models, parse_roi_mode(det.at("roi").get<std::string>()));
  Json j = stage_header("meta-apply");
  j["manifest"] = mpath;
  j["protocol"] = protocol_name(models.protocol);
  j["sequences"] = sequences_to_json(kept, false);
  write_stage(a.run, "meta-apply", j);
  std::size_t before = 0, after = 0;
  for (const auto& s : detections)
    for (const auto& f : s.frames) before += f.size();
  for (const auto& s : kept)
    for (const auto& f : s.frames) after += f.size();
  std::cout << "meta-apply: kept " << after << " of " << before << " segment(s)\n";
  return 0;
}

struct TrackArgs {
  std::string run;
  std::string input;
  std::uint64_t seed = 0;
  TrackerConfig config;
  bool absolute = false;
};

int run_track(TrackArgs a) {
  std::string input = a.input;
  if (input.empty()) input = has_stage(a.run, "meta-apply") ? "meta-apply" : "detect";
  if (input != "detect" && input != "meta-apply") throw Error(ErrorCode::InvalidArgument, "--input must be detect or meta-apply");
  const Json src = read_stage(a.run, input);
  a.config.relativeToDiagonal = !a.absolute;
  const auto tracks = track_dataset(sequences_from_stage(src), a.config, a.seed);
  Json j = stage_header("track");
  if (src.contains("manifest")) j["manifest"] = src["manifest"];
  j["input"] = input;
  j["seed"] = a.seed;
  j["config"] = tracker_config_to_json(a.config);
  j["sequences"] = sequences_to_json(tracks, true);
  write_stage(a.run, "track", j);
  std::size_t count = 0;
  for (const auto& s : tracks) count += s.tracks.size();
  std::cout << "track: " << count << " track(s)\n";
  return 0;
}

struct EmbedArgs {
  std::string manifest;
  std::string run;
  std::size_t minTrackLength = 0;
  int pcaDims = 50;
  TsneConfig tsne;
  bool strictPerplexity = false;
};

int run_embed(const EmbedArgs& a) {
  const std::string mpath = manifest_path(a.manifest, a.run);
  const DatasetManifest m = read_manifest(mpath);
  const auto tracks = sequences_from_stage(read_stage(a.run, "track"));
  EmbedOptions opts;
  opts.minTrackLength = a.minTrackLength;
  opts.pcaDims = a.pcaDims;
  opts.tsne = a.tsne;
  opts.clampPerplexity = !a.strictPerplexity;
  const EmbeddingResult r = embed_dataset(m, tracks, opts);
  Json j = stage_header("embed");
  j["manifest"] = mpath;
  j["minTrackLength"] = a.minTrackLength;
  j["pcaDims"] = a.pcaDims;
  j["pcaDimsUsed"] = r.pcaDimsUsed;
  j["descriptorDim"] = r.descriptorDim;
  j["perplexity"] = a.tsne.perplexity;
  j["perplexityUsed"] = r.perplexityUsed;
  j["iterations"] = a.tsne.iterations;
  j["learningRate"] = a.tsne.learningRate;
  j["earlyExaggeration"] = a.tsne.earlyExaggeration;
  j["earlyExaggerationIters"] = a.tsne.earlyExaggerationIters;
  j["seed"] = a.tsne.seed;
  j["points"] = Json::array();
  for (const auto& p : r.points) j["points"].push_back(embedding_point_to_json(p));
  write_stage(a.run, "embed", j);
  write_text(fs::path(a.run) / "embedding.csv", embedding_csv(r.points, {}));
  std::cout << "embed: " << r.points.size() << " point(s), perplexity " << format_double(r.perplexityUsed) << "\n";
  return 0;
}

std::vector<EmbeddingPoint> points_from_stage(const Json& j) {
  std::vector<EmbeddingPoint> pts;
  for (const Json& p : j.at("points")) pts.push_back(embedding_point_from_json(p));
  return pts;
}

struct ClusterArgs {
  std::string run;
  DbscanConfig dbscan;
  std::uint64_t seed = 0;
};

int run_cluster(const ClusterArgs& a) {
  const Json emb = read_stage(a.run, "embed");
  const ClusterAssignment c = dbscan_cluster(points_from_stage(emb), a.dbscan);
  Json j = stage_header("cluster");
  j["epsilon"] = a.dbscan.epsilon;
  j["minPts"] = a.dbscan.minPts;
  j["seed"] = a.seed;
  j["minTrackLength"] = emb.at("minTrackLength");
  j["clusterCount"] = c.clusterCount();
  std::size_t noise = 0;
  for (int l : c.labels) noise += l == kNoise;
  j["noisePoints"] = noise;
  j["labels"] = c.labels;
  write_stage(a.run, "cluster", j);
  write_text(fs::path(a.run) / "clusters.csv", embedding_csv(c.points, c.labels));
  std::cout << "cluster: " << c.clusterCount() << " cluster(s), " << noise << " noise point(s)\n";
  return 0;
}

struct EvaluateArgs {
  std::string manifest;
  std::string run;
  bool pixel = false, segment = false, tracking = false, clustering = false;
  std::string groupBy;
  std::string segmentsFrom;
  bool countFpClass = false;
};

int run_evaluate(const EvaluateArgs& a) {
  const std::string mpath = manifest_path(a.manifest, a.run);
  const DatasetManifest m = read_manifest(mpath);
  EvalRequest req;
  const bool any = a.pixel || a.segment || a.tracking || a.clustering;
  req.pixel = any ? a.pixel : true;
  req.segment = any ? a.segment : (has_stage(a.run, "track") || has_stage(a.run, "meta-apply") || has_stage(a.run, "detect"));
  req.tracking = any ? a.tracking : has_stage(a.run, "track");
  req.clustering = any ? a.clustering : has_stage(a.run, "cluster");
  req.countFalsePositiveClass = a.countFpClass;
  if (!a.groupBy.empty()) {
    if (a.groupBy == "class") req.groupBy = GroupBy::Class;
    else if (a.groupBy == "depth") req.groupBy = GroupBy::DepthBin;
    else throw Error(ErrorCode::InvalidArgument, "--group-by must be class or depth");
  }

  std::vector<SequencePrediction> segs, tracks;
  EvalInputs in;
  if (req.tracking || ((req.segment || req.groupBy) && a.segmentsFrom.empty() && has_stage(a.run, "track"))) {
    tracks = sequences_from_stage(read_stage(a.run, "track"));
    in.tracks = &tracks;
  }
  if (req.segment || req.groupBy) {
    std::string from = a.segmentsFrom;
    if (from.empty()) from = in.tracks ? "track" : has_stage(a.run, "meta-apply") ? "meta-apply" : "detect";
    if (from != "track") {
      segs = sequences_from_stage(read_stage(a.run, from));
      in.segments = &segs;
    } else if (!in.tracks) {
      tracks = sequences_from_stage(read_stage(a.run, "track"));
      in.tracks = &tracks;
    }
  }
  ClusterAssignment clusters;
  if (req.clustering) {
    const Json emb = read_stage(a.run, "embed");
    const Json cl = read_stage(a.run, "cluster");
    clusters.points = points_from_stage(emb);
    clusters.labels = cl.at("labels").get<std::vector<int>>();
    if (clusters.labels.size() != clusters.points.size())
      throw Error(ErrorCode::DimMismatch, "cluster labels and embedding points differ in count");
    in.clusters = &clusters;
    in.minTrackLength = emb.at("minTrackLength").get<std::size_t>();
  }

  const EvalOutput out = evaluate_dataset(m, in, req);
  write_stage(a.run, "evaluate", eval_output_to_json(out, req, in.minTrackLength));
  if (out.pixel) write_text(fs::path(a.run) / "pr_curve.csv", pr_curve_csv(*out.pixel));
  if (out.tracking) write_text(fs::path(a.run) / "tracking_length.csv", tracking_length_csv(*out.tracking));
  if (out.pixel) std::cout << "evaluate: AuPRC " << format_double(out.pixel->auprc) << ", FPR95 " << format_double(out.pixel->fpr95) << "\n";
  if (out.segment) std::cout << "evaluate: F1-bar " << format_double(out.segment->f1Bar) << "\n";
  if (out.tracking) std::cout << "evaluate: MOTA " << format_double(out.tracking->mot.mota) << ", mme " << out.tracking->mot.mme << "\n";
  if (out.clustering)
    std::cout << "evaluate: CS_inst " << format_double(out.clustering->csInst) << ", CS_imp " << format_double(out.clustering->csImp)
              << ", CS_frag " << format_double(out.clustering->csFrag) << "\n";
  return 0;
}

int run_report(const std::string& run) {
  static const std::vector<std::string> kStages{"synth", "detect", "meta-train", "meta-apply", "track", "embed", "cluster", "evaluate"};
  Json j = stage_header("report");
  j["stages"] = Json::array();
  Json settings = Json::object();
  std::ostringstream csv;
  csv << "metric,value\n";
  for (const std::string& stage : kStages) {
    if (!has_stage(run, stage)) continue;
    j["stages"].push_back(stage);
    const Json s = read_stage(run, stage);
    Json kept = Json::object();
    for (const auto& [key, value] : s.items())
      if (key != "sequences" && key != "points" && key != "labels" && key != "schemaVersion" && key != "stage" && key != "models")
        kept[key] = value;
    if (stage == "evaluate") {
      j["metrics"] = kept;
      auto emit = [&](const std::string& prefix, const Json& obj) {
        for (const auto& [key, value] : obj.items())
          if (value.is_number() || value.is_null()) csv << prefix << key << ',' << (value.is_null() ? "" : value.dump()) << '\n';
      };
      for (const char* family : {"pixel", "segment", "tracking", "clustering"})
        if (kept.contains(family)) emit(std::string(family) + ".", kept[family]);
    } else {
      settings[stage] = kept;
    }
  }
  if (j["stages"].empty()) throw Error(ErrorCode::IoError, "no stage files in " + run);
  j["settings"] = std::move(settings);
  write_text(fs::path(run) / "report.json", dump_json(j));
  write_text(fs::path(run) / "report.csv", csv.str());
  std::cout << "report: merged " << j["stages"].size() << " stage(s)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oodtrack: OOD segment detection, tracking, retrieval and evaluation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* cSynth = app.add_subcommand("synth", "Generate a synthetic dataset");
  cSynth->add_option("--config", synth.config, "JSON config (one sequence or {\"sequences\": [...]})");
  cSynth->add_option("--out", synth.out, "Output directory")->required();
  cSynth->add_option("--seed", synth.seed, "Seed for the preset scene");
  cSynth->add_option("--objects", synth.objects, "Objects per sequence (preset)")->check(CLI::Range(0, 1000));
  cSynth->add_option("--frames", synth.frames, "Frames per sequence (preset)")->check(CLI::PositiveNumber);
  cSynth->add_option("--size", synth.size, "Image side length (preset)")->check(CLI::Range(8, 4096));
  cSynth->add_option("--sequences", synth.sequences, "Number of sequences (preset)")->check(CLI::PositiveNumber);
  cSynth->add_option("--sigma", synth.sigma, "Score noise sigma");
  cSynth->add_option("--fp-rate", synth.fpRate, "False-positive blobs per frame");
  cSynth->add_option("--drop-prob", synth.dropProb, "Per-object detection drop probability");
  cSynth->add_option("--labeled-every", synth.labeledEvery, "Label every k-th frame");

  PerturbArgs perturb;
  auto* cPerturb = app.add_subcommand("perturb", "Apply a controlled corruption");
  cPerturb->add_option("--op", perturb.op, "dropFrames | swapTrackIds | jitterScores")->required();
  cPerturb->add_option("--manifest", perturb.manifest, "Input manifest (dropFrames, jitterScores)");
  cPerturb->add_option("--run", perturb.run, "Input run directory (swapTrackIds)");
  cPerturb->add_option("--out", perturb.out, "Output directory")->required();
  cPerturb->add_option("--drop", perturb.drops, "seq:frame:instance to suppress (repeatable)");
  cPerturb->add_option("--sigma", perturb.sigma, "Jitter sigma");
  cPerturb->add_option("--seed", perturb.seed, "Jitter seed");
  cPerturb->add_option("--sequence", perturb.sequence, "Sequence of the track to split");
  cPerturb->add_option("--track", perturb.track, "Track id to split");
  cPerturb->add_option("--from-frame", perturb.fromFrame, "First frame carrying the new id");

  DetectArgs detect;
  auto* cDetect = app.add_subcommand("detect", "Threshold score maps into segments");
  cDetect->add_option("--manifest", detect.manifest, "Dataset manifest")->required();
  cDetect->add_option("--run", detect.run, "Run directory")->required();
  cDetect->add_option("--tau", detect.tau, "Score threshold (default 0.72)");
  cDetect->add_option("--min-size", detect.minSize, "Minimum segment size in pixels")->check(CLI::PositiveNumber);
  cDetect->add_option("--roi", detect.roi, "auto | predicted | full");
  cDetect->add_option("--tau-sweep", detect.tauSweep, "Comma-separated taus; the best F1-bar on labeled frames is used");

  MetaArgs meta;
  auto* cMetaTrain = app.add_subcommand("meta-train", "Train the segment meta classifier");
  auto* cMetaApply = app.add_subcommand("meta-apply", "Drop segments the meta classifier rejects");
  for (auto* c : {cMetaTrain, cMetaApply}) {
    c->add_option("--manifest", meta.manifest, "Dataset manifest (default: recorded by detect)");
    c->add_option("--run", meta.run, "Run directory")->required();
  }
  cMetaTrain->add_option("--protocol", meta.protocol, "M1 (leave one sequence out) | M2 (train on another dataset)");
  cMetaTrain->add_option("--lambda", meta.lambda, "L1 strength (default: cross-validated)");
  cMetaTrain->add_option("--train-manifest", meta.trainManifest, "Training dataset for M2");
  cMetaTrain->add_option("--decision-threshold", meta.decisionThreshold, "Keep a segment iff p >= threshold");

  TrackArgs track;
  auto* cTrack = app.add_subcommand("track", "Link segments into tracks");
  cTrack->add_option("--run", track.run, "Run directory")->required();
  cTrack->add_option("--input", track.input, "detect | meta-apply (default: latest)");
  cTrack->add_option("--seed", track.seed, "Seed for first-frame id order");
  cTrack->add_option("--aggregation-dist", track.config.aggregationDist, "Step 1 distance (fraction of diagonal)");
  cTrack->add_option("--center-dist", track.config.centerDist, "Center distance (fraction of diagonal)");
  cTrack->add_option("--min-iou", track.config.minIoU, "Overlap threshold");
  cTrack->add_option("--regression-window", track.config.regressionWindow, "Frames used by the regression step");
  cTrack->add_option("--max-gap", track.config.maxGap, "Longest gap bridged by regression");
  cTrack->add_flag("--absolute", track.absolute, "Distances are in pixels instead of diagonal fractions");

  EmbedArgs embed;
  auto* cEmbed = app.add_subcommand("embed", "Embed tracked segments in 2D");
  cEmbed->add_option("--manifest", embed.manifest, "Dataset manifest (default: recorded by detect)");
  cEmbed->add_option("--run", embed.run, "Run directory")->required();
  cEmbed->add_option("--min-track-len", embed.minTrackLength, "Minimum track length l");
  cEmbed->add_option("--pca-dims", embed.pcaDims, "PCA dimensions")->check(CLI::PositiveNumber);
  cEmbed->add_option("--perplexity", embed.tsne.perplexity, "t-SNE perplexity");
  cEmbed->add_option("--iterations", embed.tsne.iterations, "t-SNE iterations")->check(CLI::PositiveNumber);
  cEmbed->add_option("--learning-rate", embed.tsne.learningRate, "t-SNE learning rate")->check(CLI::PositiveNumber);
  cEmbed->add_option("--exaggeration", embed.tsne.earlyExaggeration, "Early exaggeration factor")->check(CLI::PositiveNumber);
  cEmbed->add_option("--exaggeration-iters", embed.tsne.earlyExaggerationIters, "Iterations with early exaggeration")
      ->check(CLI::NonNegativeNumber);
  cEmbed->add_option("--seed", embed.tsne.seed, "t-SNE seed");
  cEmbed->add_flag("--strict-perplexity", embed.strictPerplexity, "Fail instead of lowering perplexity for few points");

  ClusterArgs cluster;
  auto* cCluster = app.add_subcommand("cluster", "DBSCAN on the embedding");
  cCluster->add_option("--run", cluster.run, "Run directory")->required();
  cCluster->add_option("--epsilon", cluster.dbscan.epsilon, "Neighbourhood radius (default 4.0)");
  cCluster->add_option("--min-pts", cluster.dbscan.minPts, "Core point threshold (default 15)");
  cCluster->add_option("--seed", cluster.seed, "Recorded only; DBSCAN is deterministic");

  EvaluateArgs evaluate;
  auto* cEvaluate = app.add_subcommand("evaluate", "Compute metrics for a run");
  cEvaluate->add_option("--manifest", evaluate.manifest, "Dataset manifest (default: recorded by detect)");
  cEvaluate->add_option("--run", evaluate.run, "Run directory")->required();
  cEvaluate->add_flag("--pixel", evaluate.pixel, "Pixel-level AuPRC and FPR95");
  cEvaluate->add_flag("--segment", evaluate.segment, "Segment-level F1 over the kappa grid");
  cEvaluate->add_flag("--tracking", evaluate.tracking, "CLEAR-MOT and tracking length");
  cEvaluate->add_flag("--clustering", evaluate.clustering, "Cluster scores");
  cEvaluate->add_option("--group-by", evaluate.groupBy, "class | depth");
  cEvaluate->add_option("--segments", evaluate.segmentsFrom, "detect | meta-apply | track (default: latest)");
  cEvaluate->add_flag("--count-fp-class", evaluate.countFpClass, "Count unmatched segments as a class in CS_imp");

  std::string reportRun;
  auto* cReport = app.add_subcommand("report", "Merge stage outputs into report.json and report.csv");
  cReport->add_option("--run", reportRun, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("UsageError", e.what(), 1);
  }

  try {
    if (cSynth->parsed()) return run_synth(synth);
    if (cPerturb->parsed()) return run_perturb(perturb);
    if (cDetect->parsed()) return run_detect(detect);
    if (cMetaTrain->parsed()) return run_meta_train(meta);
    if (cMetaApply->parsed()) return run_meta_apply(meta);
    if (cTrack->parsed()) return run_track(track);
    if (cEmbed->parsed()) return run_embed(embed);
    if (cCluster->parsed()) return run_cluster(cluster);
    if (cEvaluate->parsed()) return run_evaluate(evaluate);
    if (cReport->parsed()) return run_report(reportRun);
  } catch (const Error& e) {
    return fail(error_name(e.code()), e.what(), exit_code_for(e.code()));
  } catch (const std::exception& e) {
    return fail("InternalError", e.what(), 2);
  }
  return 1;
}
