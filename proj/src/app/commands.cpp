#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmtrack/cli.hpp"
#include "mmtrack/colorxfer.hpp"
#include "mmtrack/globallink.hpp"
#include "mmtrack/ict.hpp"
#include "mmtrack/linker.hpp"
#include "mmtrack/metrics.hpp"
#include "mmtrack/synth.hpp"
#include "mmtrack/trackio.hpp"

namespace mmtrack::cli {

namespace fs = std::filesystem;

namespace {

// `key = value` lines apply to the subcommand named on the command line.
class SubcommandConfig : public CLI::ConfigTOML {
 public:
  std::string section;

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    auto items = CLI::ConfigTOML::from_config(in);
    if (!section.empty()) {
      for (auto& item : items) {
        if (item.parents.empty()) item.parents = {section};
      }
    }
    return items;
  }
};

struct PipelineConfig {
  synth::SceneConfig scene;
  linker::TrainConfig train;
  globallink::GateConfig gate;
  ImageSize image;
  std::string profile = "mmct";
  double alpha = 0.5;
  int last_k = 30;
  int reference_stride = 30;
  double iou = 0.5;
  bool mtmc = false;

  std::string out_dir = "synth";
  std::string weights;
  std::string history;
  std::string input;
  std::string output;
  std::string embeddings_in;
  std::string embeddings_out;
  std::string global_ids;
  std::string csv;
  std::vector<std::string> gt_files;
  std::vector<std::string> pred_files;
  std::vector<std::string> track_files;
  std::vector<std::string> embedding_files;
  std::vector<std::string> camera_ids;
  std::vector<std::string> reference;
  std::vector<std::string> content;
};

std::string camera_name(const std::vector<std::string>& ids, std::size_t i) {
  return i < ids.size() ? ids[i] : "cam" + std::to_string(i + 1);
}

void require_camera_ids(const std::vector<std::string>& ids, std::size_t cameras) {
  if (!ids.empty() && ids.size() != cameras) {
    throw Error("expected " + std::to_string(cameras) + " camera ids, got " + std::to_string(ids.size()));
  }
}

void write_cuts(const std::vector<synth::Cut>& cuts, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "original_id,head_id,tail_id,head_end_frame,tail_start_frame\n";
  for (const auto& c : cuts) {
    out << c.original_id << ',' << c.head_id << ',' << c.tail_id << ',' << c.head_end_frame << ','
        << c.tail_start_frame << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

void cmd_synth(PipelineConfig& cfg, std::ostream& out) {
  cfg.scene.image_size = cfg.image;
  const auto scene = synth::gen_scene(cfg.scene);
  const fs::path root(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error("cannot create " + root.string() + ": " + ec.message());
  for (std::size_t c = 0; c < scene.gt.size(); ++c) {
    const fs::path dir = root / scene.gt[c].camera_id();
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
    auto frag_cfg = cfg.scene;
    frag_cfg.seed = cfg.scene.seed + 0x9e3779b97f4a7c15ULL * (c + 1);
    const auto frag = synth::fragment(scene.gt[c], frag_cfg);
    write_mot_file(scene.gt[c], dir / "gt.txt");
    write_mot_file(frag.tracks, dir / "result.txt");
    write_embeddings_file(synth::fragment_embeddings(scene.embeddings[c], frag), dir / "embeddings.txt");
    write_embeddings_file(scene.embeddings[c], dir / "gt_embeddings.txt");
    write_cuts(frag.cuts, dir / "cuts.csv");
    out << scene.gt[c].camera_id() << ": " << scene.gt[c].size() << " identities, "
        << frag.tracks.size() << " tracklets, " << frag.cuts.size() << " cuts\n";
  }
}

void cmd_train(PipelineConfig& cfg, std::ostream& out) {
  cfg.train.image_size = cfg.image;
  cfg.train.max_gap = cfg.gate.max_gap;
  cfg.train.spatial_radius = cfg.gate.spatial_radius;
  std::vector<TrackSet> gt;
  for (const auto& f : cfg.gt_files) gt.push_back(read_mot_file(f, fs::path(f).stem().string()));
  const auto samples = linker::generate_samples(gt, cfg.train);
  out << "samples: " << samples.size() << '\n';
  std::vector<std::array<double, 3>> history;
  const auto result = linker::train(samples, cfg.train, {}, [&](int epoch, double loss, double lr) {
    char line[96];
    std::snprintf(line, sizeof(line), "epoch %3d  loss %.6f  lr %.6g\n", epoch, loss, lr);
    out << line << std::flush;
    history.push_back({static_cast<double>(epoch), loss, lr});
  });
  linker::save_params_file(result.params, cfg.weights);
  if (!cfg.history.empty()) {
    std::ofstream h(cfg.history, std::ios::binary);
    if (!h) throw Error("cannot write " + cfg.history);
    h << "epoch,loss,lr\n";
    for (const auto& [epoch, loss, lr] : history) {
      char line[96];
      std::snprintf(line, sizeof(line), "%d,%.9g,%.9g\n", static_cast<int>(epoch), loss, lr);
      h << line;
    }
    if (!h) throw Error("failed writing " + cfg.history);
  }
}

void cmd_link(PipelineConfig& cfg, std::ostream& out) {
  if (cfg.embeddings_in.empty() != cfg.embeddings_out.empty()) {
    throw Error("--embeddings and --embeddings-out must be given together");
  }
  const auto params = linker::load_params_file(cfg.weights, linker::LinkerArch{});
  const auto tracks = read_mot_file(cfg.input);
  const auto result = globallink::run(params, tracks, cfg.gate, cfg.image);
  write_mot_file(result.tracks, cfg.output);
  if (!cfg.embeddings_in.empty()) {
    const auto table = read_embeddings_file(cfg.embeddings_in);
    write_embeddings_file(globallink::remap_embeddings(table, result.id_map), cfg.embeddings_out);
  }
  out << "tracklets: " << tracks.size() << " -> " << result.tracks.size() << ", links: "
      << result.accepted.size() << '\n';
}

void cmd_color(PipelineConfig& cfg, std::ostream& out) {
  std::vector<color::ImageRGB> refs;
  for (const auto& f : cfg.reference) refs.push_back(color::read_ppm_file(f));
  const auto stats = color::reference_stats(refs, cfg.reference_stride);
  const fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& f : cfg.content) {
    const auto img = color::read_ppm_file(f);
    color::write_ppm_file(color::transfer(img, stats), dir / fs::path(f).filename());
  }
  char line[160];
  std::snprintf(line, sizeof(line), "reference mean (%.4f, %.4f, %.4f) std (%.4f, %.4f, %.4f)\n",
                stats.mean[0], stats.mean[1], stats.mean[2], stats.std[0], stats.std[1], stats.std[2]);
  out << line << "transferred " << cfg.content.size() << " frames\n";
}

void cmd_associate(PipelineConfig& cfg, const CLI::Option* alpha_opt, std::ostream& out) {
  if (cfg.track_files.size() != cfg.embedding_files.size()) {
    throw Error("need one embedding file per track file");
  }
  require_camera_ids(cfg.camera_ids, cfg.track_files.size());
  auto assoc = ict::AssocConfig::for_profile(ict::parse_profile(cfg.profile));
  if (alpha_opt->count() > 0) assoc.alpha = cfg.alpha;
  assoc.last_k = cfg.last_k;
  std::vector<ict::CameraInput> cameras;
  for (std::size_t i = 0; i < cfg.track_files.size(); ++i) {
    cameras.push_back({read_mot_file(cfg.track_files[i], camera_name(cfg.camera_ids, i)),
                       read_embeddings_file(cfg.embedding_files[i])});
  }
  const auto map = ict::assign_global_ids(cameras, assoc);
  ict::write_global_ids_file(map, cfg.output);
  int max_gid = 0;
  for (const auto& [key, gid] : map) max_gid = std::max(max_gid, gid);
  out << "tracklets: " << map.size() << ", global ids: " << max_gid << " (alpha " << assoc.alpha
      << ")\n";
}

void emit(const std::vector<std::pair<std::string, double>>& rows, const std::string& csv,
          std::ostream& out) {
  metrics::write_table(rows, out);
  if (!csv.empty()) {
    std::ofstream f(csv, std::ios::binary);
    if (!f) throw Error("cannot write " + csv);
    metrics::write_csv(rows, f);
    if (!f) throw Error("failed writing " + csv);
  }
}

void cmd_eval(PipelineConfig& cfg, std::ostream& out) {
  if (cfg.gt_files.size() != cfg.pred_files.size()) {
    throw Error("need one prediction file per ground-truth file");
  }
  if (!cfg.mtmc) {
    if (cfg.gt_files.size() != 1) throw Error("single-camera evaluation takes one --gt and one --pred");
    const auto gt = read_mot_file(cfg.gt_files[0]);
    const auto pred = read_mot_file(cfg.pred_files[0]);
    metrics::check_frame_domain(gt, pred);
    emit(metrics::rows(metrics::evaluate(gt, pred, cfg.iou)), cfg.csv, out);
    return;
  }
  if (cfg.global_ids.empty()) throw Error("--mtmc needs --global-ids");
  require_camera_ids(cfg.camera_ids, cfg.gt_files.size());
  std::vector<TrackSet> gt;
  std::vector<TrackSet> pred;
  for (std::size_t i = 0; i < cfg.gt_files.size(); ++i) {
    gt.push_back(read_mot_file(cfg.gt_files[i], camera_name(cfg.camera_ids, i)));
    pred.push_back(read_mot_file(cfg.pred_files[i], camera_name(cfg.camera_ids, i)));
    metrics::check_frame_domain(gt.back(), pred.back());
  }
  const auto ids = ict::read_global_ids_file(cfg.global_ids);
  emit(metrics::rows(metrics::evaluate_mtmc(gt, pred, ids, cfg.iou)), cfg.csv, out);
}

void add_image_options(CLI::App* sub, PipelineConfig& cfg) {
  sub->add_option("--width", cfg.image.width, "Image width in pixels")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--height", cfg.image.height, "Image height in pixels")->capture_default_str()->check(CLI::PositiveNumber);
}

void add_gate_options(CLI::App* sub, PipelineConfig& cfg) {
  sub->add_option("--max-gap", cfg.gate.max_gap, "Largest frame gap between linked tracklets")->capture_default_str();
  sub->add_option("--radius", cfg.gate.spatial_radius, "Junction center distance limit in pixels")->capture_default_str();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  PipelineConfig cfg;
  CLI::App app("Tracklet linking, cross-camera association and evaluation toolkit", "mmtrack");
  auto config = std::make_shared<SubcommandConfig>();
  if (argc > 1) config->section = argv[1];
  app.config_formatter(config);
  app.set_config("--config", "", "Optional key = value file; flags override it");
  app.fallthrough();
  app.require_subcommand(1);

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic scene with fragmented tracks");
  synth_cmd->add_option("--out", cfg.out_dir, "Output directory")->capture_default_str();
  synth_cmd->add_option("--identities", cfg.scene.num_identities)->capture_default_str();
  synth_cmd->add_option("--cameras", cfg.scene.cameras)->capture_default_str();
  synth_cmd->add_option("--frames", cfg.scene.frames)->capture_default_str();
  synth_cmd->add_option("--min-length", cfg.scene.min_track_length)->capture_default_str();
  synth_cmd->add_option("--step-std", cfg.scene.walk_step_std)->capture_default_str();
  synth_cmd->add_option("--occlusion-rate", cfg.scene.occlusion_rate)->capture_default_str();
  synth_cmd->add_option("--gap-min", cfg.scene.occlusion_gap.min)->capture_default_str();
  synth_cmd->add_option("--gap-max", cfg.scene.occlusion_gap.max)->capture_default_str();
  synth_cmd->add_option("--intra", cfg.scene.embedding_intra_std)->capture_default_str();
  synth_cmd->add_option("--separation", cfg.scene.embedding_inter_separation)->capture_default_str();
  synth_cmd->add_option("--camera-bias", cfg.scene.camera_bias_std)->capture_default_str();
  synth_cmd->add_option("--seed", cfg.scene.seed)->capture_default_str();
  add_image_options(synth_cmd, cfg);

  auto* train_cmd = app.add_subcommand("train", "Train the link model on ground-truth tracks");
  train_cmd->add_option("--gt", cfg.gt_files, "Ground-truth MOT files")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", cfg.weights, "Weights file to write")->required();
  train_cmd->add_option("--history", cfg.history, "Per-epoch loss CSV");
  train_cmd->add_option("--epochs", cfg.train.epochs)->capture_default_str();
  train_cmd->add_option("--lr", cfg.train.learning_rate)->capture_default_str();
  train_cmd->add_option("--batch", cfg.train.batch_size)->capture_default_str();
  train_cmd->add_option("--smoothing", cfg.train.label_smoothing)->capture_default_str();
  train_cmd->add_option("--ratio", cfg.train.neg_pos_ratio, "Negatives per positive")->capture_default_str();
  train_cmd->add_option("--samples", cfg.train.num_samples)->capture_default_str();
  train_cmd->add_option("--seed", cfg.train.seed)->capture_default_str();
  add_image_options(train_cmd, cfg);
  add_gate_options(train_cmd, cfg);

  auto* link_cmd = app.add_subcommand("link", "Merge fragmented tracklets with a trained link model");
  link_cmd->add_option("--weights", cfg.weights)->required()->check(CLI::ExistingFile);
  link_cmd->add_option("--input", cfg.input, "Tracker output (MOT)")->required()->check(CLI::ExistingFile);
  link_cmd->add_option("--output", cfg.output, "Linked tracks (MOT)")->required();
  link_cmd->add_option("--sigma-a", cfg.gate.score_threshold, "Minimum link probability")->capture_default_str();
  link_cmd->add_option("--embeddings", cfg.embeddings_in, "Embeddings to re-key by the linked ids");
  link_cmd->add_option("--embeddings-out", cfg.embeddings_out);
  add_image_options(link_cmd, cfg);
  add_gate_options(link_cmd, cfg);

  auto* color_cmd = app.add_subcommand("color", "lab color transfer of content frames to a reference style");
  color_cmd->add_option("--reference", cfg.reference, "Reference PPM frames")->required()->check(CLI::ExistingFile);
  color_cmd->add_option("--content", cfg.content, "Content PPM frames")->required()->check(CLI::ExistingFile);
  color_cmd->add_option("--out", cfg.out_dir, "Output directory")->required();
  color_cmd->add_option("--stride", cfg.reference_stride, "Use every k-th reference frame")->capture_default_str();

  auto* assoc_cmd = app.add_subcommand("associate", "Assign global ids across cameras");
  assoc_cmd->add_option("--tracks", cfg.track_files, "Per-camera MOT files")->required()->check(CLI::ExistingFile);
  assoc_cmd->add_option("--embeddings", cfg.embedding_files, "Per-camera embedding files")->required()->check(CLI::ExistingFile);
  assoc_cmd->add_option("--camera-ids", cfg.camera_ids);
  assoc_cmd->add_option("--output", cfg.output, "Global id CSV")->required();
  assoc_cmd->add_option("--profile", cfg.profile, "mmct (alpha 0.5) or dhu (alpha 0.8)")->capture_default_str();
  auto* alpha_opt = assoc_cmd->add_option("--alpha", cfg.alpha, "Overrides the profile threshold");
  assoc_cmd->add_option("--last-k", cfg.last_k, "Frames averaged per tracklet")->capture_default_str();

  auto* eval_cmd = app.add_subcommand("eval", "Score predictions against ground truth");
  eval_cmd->add_option("--gt", cfg.gt_files)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--pred", cfg.pred_files)->required()->check(CLI::ExistingFile);
  eval_cmd->add_flag("--mtmc", cfg.mtmc, "Cross-camera identity measures");
  eval_cmd->add_option("--global-ids", cfg.global_ids)->check(CLI::ExistingFile);
  eval_cmd->add_option("--camera-ids", cfg.camera_ids);
  eval_cmd->add_option("--iou", cfg.iou)->capture_default_str();
  eval_cmd->add_option("--csv", cfg.csv, "metric,value CSV output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "mmtrack: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*synth_cmd) cmd_synth(cfg, out);
    if (*train_cmd) cmd_train(cfg, out);
    if (*link_cmd) cmd_link(cfg, out);
    if (*color_cmd) cmd_color(cfg, out);
    if (*assoc_cmd) cmd_associate(cfg, alpha_opt, out);
    if (*eval_cmd) cmd_eval(cfg, out);
  } catch (const std::exception& e) {
    err << "mmtrack: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace mmtrack::cli
