// czc: experiment runner and codec/store debugging tools.
//
// Subcommands:
//   run           full incremental experiment from a key=value config file
//   encode        compress one PNG with a trained codec checkpoint
//   decode        reconstruct a PNG from a compressed stream
//   inspect-store print an exemplar store's manifest with per-record costs
//   gen-dataset   write the synthetic desk corpus as a PNG directory tree
//
// CZC_VERBOSE=1 in the environment turns on per-phase progress on stderr.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "czc/harness.hpp"
#include "czc/synth.hpp"

namespace {

bool verbose_env() {
  const char* v = std::getenv("CZC_VERBOSE");
  return v && *v && std::string(v) != "0";
}

std::vector<uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw czc::IoError("cannot open " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                              std::istreambuf_iterator<char>());
}

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw czc::IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw czc::IoError("short write to " + path);
}

int cmd_run(const std::string& config_path, const std::map<std::string, std::string>& overrides) {
  czc::ExperimentConfig cfg = czc::load_experiment_config(config_path, overrides);
  auto log = [](const std::string& s) { std::cerr << s << "\n"; };
  czc::RunReport rep =
      czc::run_experiment(cfg, verbose_env() ? std::function<void(const std::string&)>(log)
                                             : std::function<void(const std::string&)>{});
  std::cout << czc::render_report_text(rep);
  return 0;
}

int cmd_encode(const std::string& model_path, const std::string& input,
               const std::string& output) {
  czc::CodecModel model = czc::load_codec(model_path);
  czc::Image img = czc::read_png(input);
  double est_bits = 0;
  czc::Bitstream bs = czc::encode(model, img, &est_bits);
  std::vector<uint8_t> bytes = bs.serialize();
  write_bytes(output, bytes);

  czc::Image recon = czc::decode(model, bs);
  std::printf("%s: %dx%d -> %zu bytes (%.4f bpp, estimated %.4f), psnr %.2f dB\n", input.c_str(),
              img.w, img.h, bytes.size(), czc::measure_bpp(bs),
              est_bits / (static_cast<double>(img.h) * img.w), czc::psnr(img, recon));
  return 0;
}

int cmd_decode(const std::string& model_path, const std::string& input,
               const std::string& output) {
  czc::CodecModel model = czc::load_codec(model_path);
  czc::Bitstream bs = czc::Bitstream::deserialize(read_bytes(input));
  czc::Image img = czc::decode(model, bs);
  czc::write_png(output, img);
  std::printf("%s: %zu-byte stream -> %dx%d png\n", output.c_str(), bs.serialize().size(), img.w,
              img.h);
  return 0;
}

int cmd_inspect_store(const std::string& dir) {
  czc::ExemplarStore store = czc::load_store(dir);
  std::printf("class  rank  phase  mode                 bits     fg box\n");
  for (const auto& [cls, recs] : store.by_class) {
    for (size_t rank = 0; rank < recs.size(); ++rank) {
      const czc::ExemplarRecord& r = recs[rank];
      char box[48] = "-";
      if (r.has_foreground)
        std::snprintf(box, sizeof box, "(%d,%d)-(%d,%d)", r.bbox.x_min, r.bbox.y_min, r.bbox.x_max,
                      r.bbox.y_max);
      std::printf("%5d  %4zu  %5d  %-19s  %7llu  %s\n", cls, rank, r.phase_created,
                  czc::mode_name(r.mode), static_cast<unsigned long long>(r.cost_bits()), box);
    }
  }
  std::printf("total: %zu records, %llu bits held, mean %.4f bpp\n", store.count(),
              static_cast<unsigned long long>(store.used_bits()), store.mean_record_bpp());
  return 0;
}

int cmd_gen_dataset(const std::string& out, int classes, int train_per_class, int test_per_class,
                    uint64_t seed, int size) {
  czc::synth::write_desk_dataset(out, classes, train_per_class, test_per_class, seed, size);
  std::printf("%s: %d classes, %d train + %d test images each, %dx%d\n", out.c_str(), classes,
              train_per_class, test_per_class, size, size);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"class-incremental learning with compressed exemplar replay"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "run an experiment from a config file");
  std::string config_path, ov_mode, ov_out;
  std::string ov_seed;
  run->add_option("--config", config_path, "key=value config file")->required();
  run->add_option("--mode", ov_mode, "override compression mode");
  run->add_option("--seed", ov_seed, "override the experiment seed");
  run->add_option("--out", ov_out, "override the output directory");

  // encode / decode
  auto* enc = app.add_subcommand("encode", "compress a PNG with a codec checkpoint");
  std::string model_path, input, output;
  enc->add_option("--model", model_path, "codec checkpoint (codec.czm)")->required();
  enc->add_option("--input", input, "input PNG")->required();
  enc->add_option("--output", output, "output stream path")->required();

  auto* dec = app.add_subcommand("decode", "reconstruct a PNG from a stream");
  std::string d_model, d_input, d_output;
  dec->add_option("--model", d_model, "codec checkpoint (codec.czm)")->required();
  dec->add_option("--input", d_input, "input stream path")->required();
  dec->add_option("--output", d_output, "output PNG")->required();

  // inspect-store
  auto* ins = app.add_subcommand("inspect-store", "print an exemplar store manifest");
  std::string store_dir;
  ins->add_option("--store", store_dir, "store directory")->required();

  // gen-dataset
  auto* gen = app.add_subcommand("gen-dataset", "write the synthetic desk corpus");
  std::string gen_out;
  int gen_classes = 10, gen_train = 100, gen_test = 20, gen_size = 32;
  uint64_t gen_seed = 1993;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--classes", gen_classes, "number of classes (1..10)");
  gen->add_option("--train-per-class", gen_train, "training images per class");
  gen->add_option("--test-per-class", gen_test, "test images per class");
  gen->add_option("--seed", gen_seed, "corpus seed");
  gen->add_option("--size", gen_size, "tile side in pixels");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      std::map<std::string, std::string> overrides;
      if (!ov_mode.empty()) overrides["mode"] = ov_mode;
      if (!ov_seed.empty()) overrides["seed"] = ov_seed;
      if (!ov_out.empty()) overrides["out"] = ov_out;
      return cmd_run(config_path, overrides);
    }
    if (*enc) return cmd_encode(model_path, input, output);
    if (*dec) return cmd_decode(d_model, d_input, d_output);
    if (*ins) return cmd_inspect_store(store_dir);
    if (*gen) return cmd_gen_dataset(gen_out, gen_classes, gen_train, gen_test, gen_seed, gen_size);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
