#pragma once

#include "msreg/bench.hpp"
#include "msreg/contrastive.hpp"
#include "msreg/io.hpp"
#include "msreg/msnet.hpp"
#include "msreg/register.hpp"
#include "msreg/udge.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace msreg {

namespace cli {

namespace fs = std::filesystem;

/// Full configuration file: {"model": {...}, "train": {...}, "udge": {...}},
/// each section optional and holding the fields of the matching struct.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  UdgeParams udge;
};

inline RunConfig read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config '" + path + "': " + e.what());
  }
  if (!j.is_object()) throw ParseError("config '" + path + "' must be an object");
  for (const auto& [key, value] : j.items())
    if (key != "model" && key != "train" && key != "udge")
      throw ParseError("config '" + path + "': unknown section '" + key + "'");
  RunConfig c;
  try {
    if (j.contains("model")) c.model = j["model"].get<ModelConfig>();
    if (j.contains("train")) c.train = j["train"].get<TrainConfig>();
    if (j.contains("udge")) c.udge = j["udge"].get<UdgeParams>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config '" + path + "': " + e.what());
  }
  return c;
}

inline std::vector<fs::path> list_clouds(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".ply" || ext == ".xyz" || ext == ".txt")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no .ply/.xyz clouds in '" + dir + "'");
  return out;
}

inline void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

inline std::string pad(size_t v, int width) {
  std::string s = std::to_string(v);
  return std::string(s.size() < static_cast<size_t>(width) ? width - s.size() : 0, '0') + s;
}

inline void print_epoch(const EpochStats& e) {
  std::cout << "epoch " << e.epoch << " loss " << detail::fmt(e.mean_loss) << " pos " << detail::fmt(e.mean_pos_dist)
            << " neg " << detail::fmt(e.mean_hardest_neg_dist) << "\n";
}

}  // namespace cli

/// Command-line entry point; returns the process exit code.
inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Multi-scale sparse voxel descriptors for point-cloud registration"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate synthetic scenes");
  std::string synth_out;
  size_t synth_scenes = 10;
  double synth_extent = 5.0, synth_density = 300.0, synth_clutter = 1.0;
  std::string synth_profile = "per_object";
  uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--scenes", synth_scenes, "Number of scenes")->check(CLI::PositiveNumber);
  synth->add_option("--extent", synth_extent, "Scene side length (m)")->check(CLI::PositiveNumber);
  synth->add_option("--density", synth_density, "Mean points per square meter")->check(CLI::PositiveNumber);
  synth->add_option("--profile", synth_profile, "uniform | per_object | lidar_like");
  synth->add_option("--clutter", synth_clutter, "Multiplier on the number of objects")->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", synth_seed, "Random seed");

  // pairs
  auto* pairs = app.add_subcommand("pairs", "Generate UDGE training pairs from a directory of clouds");
  std::string pairs_in, pairs_out, pairs_preset = "indoor", pairs_config;
  size_t pairs_per_scene = 10;
  uint64_t pairs_seed = 0;
  pairs->add_option("--in", pairs_in, "Directory of source clouds")->required();
  pairs->add_option("--out", pairs_out, "Output manifest (JSON)")->required();
  pairs->add_option("--preset", pairs_preset, "indoor | outdoor | object");
  pairs->add_option("--config", pairs_config, "Config file whose udge section overrides the preset");
  pairs->add_option("--per-scene", pairs_per_scene, "Pairs per source cloud")->check(CLI::PositiveNumber);
  pairs->add_option("--seed", pairs_seed, "Random seed");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model on a pair manifest");
  std::string train_config, train_pairs, train_out, train_trace;
  std::optional<uint64_t> train_seed;
  train_cmd->add_option("--config", train_config, "Config file (model/train sections)")->required();
  train_cmd->add_option("--pairs", train_pairs, "Pair manifest")->required();
  train_cmd->add_option("--out", train_out, "Output checkpoint")->required();
  train_cmd->add_option("--trace", train_trace, "Loss-trace CSV (default: <out>.loss.csv)");
  train_cmd->add_option("--seed", train_seed, "Overrides train.seed");

  // transfer
  auto* transfer = app.add_subcommand("transfer", "Fine-tune a checkpoint on UDGE pairs");
  std::string tr_ckpt, tr_pairs, tr_out, tr_config, tr_trace;
  double tr_lr = 0.001;
  int tr_epochs = 200;
  std::optional<uint64_t> tr_seed;
  transfer->add_option("--ckpt", tr_ckpt, "Input checkpoint")->required();
  transfer->add_option("--pairs", tr_pairs, "UDGE pair manifest")->required();
  transfer->add_option("--out", tr_out, "Output checkpoint")->required();
  transfer->add_option("--lr", tr_lr, "Learning rate")->check(CLI::NonNegativeNumber);
  transfer->add_option("--epochs", tr_epochs, "Epochs")->check(CLI::NonNegativeNumber);
  transfer->add_option("--config", tr_config, "Config file (train section)");
  transfer->add_option("--trace", tr_trace, "Loss-trace CSV (default: <out>.loss.csv)");
  transfer->add_option("--seed", tr_seed, "Overrides train.seed");

  // register
  auto* reg = app.add_subcommand("register", "Register two clouds");
  std::string reg_ckpt, reg_src, reg_dst, reg_out;
  size_t reg_keypoints = 5000;
  double reg_threshold = 0.1;
  uint64_t reg_seed = 0;
  reg->add_option("--ckpt", reg_ckpt, "Checkpoint")->required();
  reg->add_option("--src", reg_src, "Source cloud")->required();
  reg->add_option("--dst", reg_dst, "Target cloud")->required();
  reg->add_option("--out", reg_out, "Pose file (JSON)")->required();
  reg->add_option("--keypoints", reg_keypoints, "Keypoints per cloud")->check(CLI::PositiveNumber);
  reg->add_option("--threshold", reg_threshold, "RANSAC inlier threshold (m)")->check(CLI::PositiveNumber);
  reg->add_option("--seed", reg_seed, "Random seed");

  // eval
  auto* eval = app.add_subcommand("eval", "Benchmark a checkpoint on a pair manifest");
  std::string ev_ckpt, ev_pairs, ev_report;
  EvalConfig ev_cfg;
  eval->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  eval->add_option("--pairs", ev_pairs, "Pair manifest with gt_transform entries")->required();
  eval->add_option("--report", ev_report, "Report CSV")->required();
  eval->add_option("--tau1", ev_cfg.tau1, "Inlier distance (m)")->check(CLI::PositiveNumber);
  eval->add_option("--tau2", ev_cfg.tau2, "Hit-ratio threshold")->check(CLI::Range(0.0, 1.0));
  eval->add_option("--keypoints", ev_cfg.n_keypoints, "Keypoints per cloud")->check(CLI::PositiveNumber);
  eval->add_option("--seed", ev_cfg.seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) {
      SceneParams sp;
      sp.extent = synth_extent;
      sp.density = synth_density;
      sp.profile = density_profile_from_string(synth_profile);
      sp.clutter = synth_clutter;
      cli::fs::create_directories(synth_out);
      for (size_t s = 0; s < synth_scenes; ++s) {
        PointCloud c = synth_scene(derive_seed(synth_seed, s), sp);
        const auto path = (cli::fs::path(synth_out) / ("scene_" + cli::pad(s, 3) + ".ply")).string();
        save_cloud(c, path, CloudFormat::ply_binary_le);
        std::cout << path << " " << c.size() << " points\n";
      }
    } else if (*pairs) {
      UdgeParams params = udge_preset(pairs_preset);
      if (!pairs_config.empty()) {
        std::ifstream in(pairs_config);
        if (!in) throw IoError("cannot open config '" + pairs_config + "'");
        auto j = nlohmann::json::parse(in, nullptr, true, true);
        if (j.contains("udge")) {
          nlohmann::json merged = params;
          merged.merge_patch(j["udge"]);
          params = merged.get<UdgeParams>();
        }
      }
      cli::ensure_parent(pairs_out);
      const auto manifest_dir = cli::fs::path(pairs_out).parent_path();
      const auto cloud_dir_name = cli::fs::path(pairs_out).stem().string() + "_clouds";
      cli::fs::create_directories(manifest_dir / cloud_dir_name);
      std::vector<PairRecord> records;
      size_t index = 0;
      for (const auto& src : cli::list_clouds(pairs_in)) {
        const PointCloud cloud = load_cloud(src.string());
        for (size_t k = 0; k < pairs_per_scene; ++k, ++index) {
          const uint64_t seed = derive_seed(pairs_seed, index);
          PairSample ps;
          try {
            ps = generate_pair(cloud, params, seed, src.filename().string());
          } catch (const PairGenerationError& e) {
            std::cerr << "warning: " << e.what() << "; skipped\n";
            continue;
          }
          PairRecord r;
          r.id = "pair_" + cli::pad(index, 4);
          r.source_cloud = src.filename().string();
          r.seed = seed;
          r.params = params;
          r.src = cloud_dir_name + "/" + r.id + "_src.ply";
          r.dst = cloud_dir_name + "/" + r.id + "_dst.ply";
          r.gt_transform = ps.T_gt;
          save_cloud(ps.X, (manifest_dir / r.src).string(), CloudFormat::ply_binary_le);
          save_cloud(ps.Y, (manifest_dir / r.dst).string(), CloudFormat::ply_binary_le);
          records.push_back(std::move(r));
        }
      }
      if (records.empty()) throw std::runtime_error("no pair could be generated");
      write_pair_manifest(pairs_out, records);
      std::cout << records.size() << " pairs written to " << pairs_out << "\n";
    } else if (*train_cmd) {
      cli::RunConfig rc = cli::read_config(train_config);
      if (train_seed) rc.train.seed = *train_seed;
      auto data = load_training_pairs(read_pair_manifest(train_pairs));
      Model<float> model = build_model<float>(rc.model, rc.train.seed);
      auto result = train(model, data, rc.train, cli::print_epoch);
      cli::ensure_parent(train_out);
      save_checkpoint(model, train_out);
      write_loss_trace(train_trace.empty() ? train_out + ".loss.csv" : train_trace, result.trace);
      if (result.skipped_pairs) std::cerr << "warning: " << result.skipped_pairs << " pairs had no positives\n";
    } else if (*transfer) {
      TrainConfig tc;
      if (!tr_config.empty()) tc = cli::read_config(tr_config).train;
      tc.lr = tr_lr;
      tc.epochs = tr_epochs;
      if (tr_seed) tc.seed = *tr_seed;
      Model<float> model = load_checkpoint(tr_ckpt);
      auto data = load_training_pairs(read_pair_manifest(tr_pairs));
      auto result = train(model, data, tc, cli::print_epoch);
      cli::ensure_parent(tr_out);
      save_checkpoint(model, tr_out);
      write_loss_trace(tr_trace.empty() ? tr_out + ".loss.csv" : tr_trace, result.trace);
    } else if (*reg) {
      Model<float> model = load_checkpoint(reg_ckpt);
      const PointCloud X = load_cloud(reg_src);
      const PointCloud Y = load_cloud(reg_dst);
      RansacConfig rc;
      rc.inlier_threshold = reg_threshold;
      auto r = register_pair(model, X, Y, reg_keypoints, rc, reg_seed);
      cli::ensure_parent(reg_out);
      write_pose_file(reg_out, r);
      std::cout << (r.success ? "registered" : "registration failed") << ": " << r.matches.size() << " matches, "
                << r.inliers.size() << " inliers\n";
    } else if (*eval) {
      Model<float> model = load_checkpoint(ev_ckpt);
      auto records = read_pair_manifest(ev_pairs);
      auto rep = run_benchmark(model, records, ev_cfg);
      cli::ensure_parent(ev_report);
      write_report(ev_report, rep, ev_cfg);
      std::cout << "FMR " << detail::fmt(rep.fmr) << " median SRE " << detail::fmt(rep.median_sre) << " failures "
                << rep.failures << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

inline int cli_main(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace msreg
