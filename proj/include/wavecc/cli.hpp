#pragma once

// Command-line front end: train, encode, decode, eval, bdrate, inspect.

#include <CLI11.hpp>

#include <iomanip>
#include <ostream>

#include "wavecc/evalkit.hpp"
#include "wavecc/trainer.hpp"

namespace wavecc {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitIo = 3, kExitFormat = 4, kExitNumeric = 5 };

inline int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::kUsage: return kExitUsage;
    case ErrorKind::kIo: return kExitIo;
    case ErrorKind::kFormat:
    case ErrorKind::kDigest:
    case ErrorKind::kShape: return kExitFormat;
    case ErrorKind::kNumeric:
    case ErrorKind::kState: return kExitNumeric;
  }
  return kExitNumeric;
}

namespace cli_detail {

inline std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

inline std::uint64_t symbols_digest(const SymbolPlane& sp) {
  return fnv1a64(reinterpret_cast<const std::uint8_t*>(sp.values.data()), sp.values.size() * sizeof(std::int16_t));
}

/// Per-subband diagnostics shared by encode and decode.
inline void write_report(const std::filesystem::path& path, const CodingTrace& trace, const LatentSymbols& symbols) {
  std::string text = "component,subband,orientation,level,coefficients,table_bits,model_bits,symbols_fnv\n";
  char buf[256];
  for (const auto& r : trace.subbands) {
    const SymbolPlane& sp = symbols[static_cast<std::size_t>(r.component)][static_cast<std::size_t>(r.index - 1)];
    std::snprintf(buf, sizeof buf, "%s,%d,%s,%d,%zu,%.6f,%.6f,%016llx\n", to_string(r.component), r.index,
                  to_string(r.id.orientation), r.id.level, r.coefficients, r.table_bits, r.model_bits,
                  static_cast<unsigned long long>(symbols_digest(sp)));
    text += buf;
  }
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

/// Training keys accepted in a config file besides the model keys.
inline void apply_train_config(TrainConfig& tc, const std::map<std::string, std::string>& kv) {
  try {
    for (const auto& [k, v] : kv) {
      if (k == "batch_size") tc.batch_size = std::stoul(v);
      else if (k == "crop") tc.crop = std::stoul(v);
      else if (k == "lr") tc.lr = std::stod(v);
      else if (k == "lr_min") tc.lr_min = std::stod(v);
      else if (k == "weight_decay") tc.weight_decay = std::stod(v);
      else if (k == "lambda") tc.lambda = std::stod(v);
      else if (k == "steps") tc.steps = std::stol(v);
      else if (k == "seed") tc.seed = std::stoull(v);
      else if (std::find(ModelConfig::keys().begin(), ModelConfig::keys().end(), k) == ModelConfig::keys().end()) {
        fail(ErrorKind::kUsage, "config: unknown key '" + k + "'");
      }
    }
  } catch (const std::logic_error&) {
    fail(ErrorKind::kUsage, "config: malformed numeric value");
  }
}

}  // namespace cli_detail

/// Runs the tool; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"wavecc: learned wavelet image codec with cross-component context"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train a model (stage 1: luma, stage 2: chroma context)");
  int stage = 1;
  std::string data_dir, out_path, init_path, config_path, log_path;
  double lambda = 0.01;
  long steps = 300;
  std::uint64_t seed = 1;
  std::size_t batch = 0, crop = 0;
  double lr = 0.0;
  train->add_option("--stage", stage, "1 or 2")->check(CLI::IsMember({1, 2}));
  train->add_option("--data", data_dir, "directory of PNG/PPM images")->required();
  train->add_option("--lambda", lambda, "rate-distortion trade-off");
  train->add_option("--steps", steps, "optimisation steps");
  train->add_option("--seed", seed, "batching seed");
  train->add_option("--out", out_path, "output checkpoint")->required();
  train->add_option("--init", init_path, "starting checkpoint (required for stage 2)");
  train->add_option("--config", config_path, "key=value config file");
  train->add_option("--log", log_path, "training log CSV (default: <out>.log.csv)");
  train->add_option("--batch", batch, "batch size");
  train->add_option("--crop", crop, "patch size");
  train->add_option("--lr", lr, "initial learning rate");

  // encode
  auto* encode = app.add_subcommand("encode", "compress an image");
  std::string model_path, in_path, report_path;
  bool ablate = false;
  encode->add_option("--model", model_path)->required();
  encode->add_option("--in", in_path)->required();
  encode->add_option("--out", out_path)->required();
  encode->add_option("--report", report_path, "per-subband diagnostics CSV");
  encode->add_flag("--ablate-cross-component", ablate, "zero the cross-component context");

  // decode
  auto* decode = app.add_subcommand("decode", "decompress a bitstream");
  bool force = false;
  decode->add_option("--model", model_path)->required();
  decode->add_option("--in", in_path)->required();
  decode->add_option("--out", out_path)->required();
  decode->add_option("--report", report_path, "per-subband diagnostics CSV");
  decode->add_flag("--force", force, "decode despite a weights digest mismatch");

  // eval
  auto* eval = app.add_subcommand("eval", "encode/decode a directory and record one RD point");
  std::size_t jobs = 1;
  std::string codec_name = "wavecc";
  bool append = false;
  eval->add_option("--model", model_path)->required();
  eval->add_option("--data", data_dir)->required();
  eval->add_option("--out", out_path)->required();
  eval->add_option("--jobs", jobs, "worker threads")->check(CLI::Range(1, 256));
  eval->add_option("--codec", codec_name, "codec label for the CSV row");
  eval->add_flag("--append", append, "append to an existing CSV");
  eval->add_flag("--ablate-cross-component", ablate, "zero the cross-component context");

  // bdrate
  auto* bdrate = app.add_subcommand("bdrate", "Bjontegaard delta rate of two RD curves");
  std::string anchor_path, test_path;
  bdrate->add_option("--anchor", anchor_path)->required();
  bdrate->add_option("--test", test_path)->required();

  // inspect
  auto* inspect = app.add_subcommand("inspect", "print bitstream header fields");
  inspect->add_option("--in", in_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*train) {
      TrainConfig tc;
      ModelConfig mc;
      if (!config_path.empty()) {
        const auto kv = read_kv_file(config_path);
        cli_detail::apply_train_config(tc, kv);
        mc.apply(kv);
      }
      tc.stage = stage;
      if (train->count("--lambda")) tc.lambda = lambda;
      if (train->count("--steps")) tc.steps = steps;
      if (train->count("--seed")) tc.seed = seed;
      if (batch) tc.batch_size = batch;
      if (crop) tc.crop = crop;
      if (lr > 0.0) tc.lr = lr;
      if (stage == 2 && init_path.empty()) fail(ErrorKind::kUsage, "train: stage 2 requires --init <stage-1 checkpoint>");
      std::unique_ptr<Model<float>> model;
      if (!init_path.empty()) {
        model = load_model(init_path);
      } else {
        model = std::make_unique<Model<float>>(mc);
      }
      const Dataset ds = load_dataset(data_dir, &err);
      const auto log = stage == 1 ? train_stage1(*model, ds, tc) : train_stage2(*model, ds, tc);
      save_checkpoint(*model, {stage, tc.lambda, tc.steps, tc.seed, model->config}, out_path);
      write_train_log(log, log_path.empty() ? out_path + ".log.csv" : log_path);
      out << "wavecc train ok stage=" << stage << " steps=" << tc.steps << " lambda=" << cli_detail::fmt(tc.lambda)
          << " final_loss=" << cli_detail::fmt(log.back().loss) << " images=" << ds.images.size()
          << " out=" << out_path << "\n";
      return kExitOk;
    }
    if (*encode) {
      auto model = load_model(model_path);
      const RgbImage img = load_image(in_path);
      const EncodeResult res = encode_image(*model, img, {ablate});
      write_file_atomic(out_path, res.bytes);
      if (!report_path.empty()) cli_detail::write_report(report_path, res.trace, res.symbols);
      const double bpp = bits_per_pixel(res.bitstream.payload.size(), img.width, img.height);
      out << "wavecc encode ok bytes=" << res.bytes.size() << " payload_bytes=" << res.bitstream.payload.size()
          << " bpp=" << cli_detail::fmt(bpp) << " estimated_bits=" << cli_detail::fmt(res.trace.table_bits(), 10)
          << " width=" << img.width << " height=" << img.height << "\n";
      return kExitOk;
    }
    if (*decode) {
      auto model = load_model(model_path);
      const auto bytes = read_file_bytes(in_path);
      const DecodeResult res = decode_image(*model, bytes, {force});
      save_image(res.image, out_path);
      if (!report_path.empty()) cli_detail::write_report(report_path, res.trace, res.symbols);
      out << "wavecc decode ok width=" << res.image.width << " height=" << res.image.height << " out=" << out_path
          << "\n";
      return kExitOk;
    }
    if (*eval) {
      CheckpointMeta meta;
      auto model = load_model(model_path, &meta);
      const EvalSummary sum = evaluate_directory(*model, data_dir, {jobs, ablate});
      const double mb = sum.mean_bpp, mp = sum.mean_psnr_db;
      std::vector<RdPoint> pts;
      if (append && std::filesystem::exists(out_path)) pts = load_rd_csv(out_path);
      pts.push_back({codec_name, meta.lambda, mb, mp});
      export_rd(pts, out_path);
      out << "wavecc eval ok images=" << sum.images << " bpp=" << cli_detail::fmt(mb)
          << " psnr_db=" << cli_detail::fmt(mp) << " out=" << out_path << "\n";
      return kExitOk;
    }
    if (*bdrate) {
      const double bd = bd_rate(load_rd_csv(anchor_path), load_rd_csv(test_path));
      std::ostringstream pct;
      pct << std::fixed << std::setprecision(2) << (std::abs(bd) < 0.005 ? 0.0 : bd);
      out << pct.str() << "%\n";
      out << "wavecc bdrate ok bd_rate=" << pct.str() << "%\n";
      return kExitOk;
    }
    if (*inspect) {
      const Bitstream bs = parse_bitstream(read_file_bytes(in_path));
      const BitstreamHeader& h = bs.header;
      out << "version=" << h.version << "\nflags=" << h.flags << "\norig_width=" << h.orig_width
          << "\norig_height=" << h.orig_height << "\npadded_width=" << h.padded_width
          << "\npadded_height=" << h.padded_height << "\nlevels=" << int(h.levels) << "\nmixtures=" << int(h.mixtures)
          << "\ndelta=" << cli_detail::fmt(h.delta, 9) << "\nweights_digest=" << std::hex << std::setw(16)
          << std::setfill('0') << h.weights_digest << std::dec << std::setfill(' ') << "\n";
      const char* comps[3] = {"Y", "Cb", "Cr"};
      for (std::size_t c = 0; c < 3; ++c) {
        out << "bounds." << comps[c] << "=";
        for (std::size_t i = 0; i < kBitstreamSubbands; ++i) {
          out << (i ? " " : "") << h.bounds[c][i].lo << ":" << h.bounds[c][i].hi;
        }
        out << "\n";
      }
      out << "payload_length=" << h.payload_length << "\n";
      out << "wavecc inspect ok payload_bytes=" << h.payload_length << " width=" << h.orig_width
          << " height=" << h.orig_height << "\n";
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "wavecc: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::bad_alloc&) {
    err << "wavecc: numeric error: out of memory\n";
    return kExitNumeric;
  }
  return kExitUsage;
}

}  // namespace wavecc
