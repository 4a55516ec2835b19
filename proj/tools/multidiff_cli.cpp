#include "multidiff/commands.hpp"
#include "multidiff/config.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace multidiff;

namespace {

struct Common {
  std::string config;
  std::string out = ".";
};

struct Sampling {
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::string solver;
  std::string grid;

  [[nodiscard]] SampleOverrides overrides() const {
    SampleOverrides o;
    o.seed = seed;
    o.steps = steps;
    if (!solver.empty()) o.solver = parse_solver(solver);
    if (!grid.empty()) o.grid = parse_grid(grid);
    return o;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Config file (section.key = value lines)");
  cmd->add_option("--out", c.out, "Output directory");
}

void add_sampling(CLI::App* cmd, Sampling& s, bool grid) {
  cmd->add_option("--checkpoint", s.checkpoint, "Training checkpoint")->required();
  cmd->add_option("--seed", s.seed, "Sampling seed");
  cmd->add_option("--steps", s.steps, "Number of solver steps");
  cmd->add_option("--solver", s.solver, "ancestral or dpmpp")->check(CLI::IsMember({"ancestral", "dpmpp"}));
  if (grid) cmd->add_option("--grid", s.grid, "Tile NxM samples into one image per modality");
}

RunConfig load(const Common& c) { return c.config.empty() ? parse_config_text("") : parse_config(c.config); }

// name=path pairs
std::map<std::string, fs::path> parse_inputs(const std::vector<std::string>& items) {
  std::map<std::string, fs::path> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == item.size())
      throw ValidationError("--input expects modality=path, got '" + item + "'");
    if (!out.emplace(item.substr(0, eq), item.substr(eq + 1)).second)
      throw ValidationError("modality given twice: " + item.substr(0, eq));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal diffusion toolkit"};
  app.require_subcommand(1);

  Common common;
  Sampling sampling;
  std::vector<std::string> inputs, targets, cycle{"optical", "radar_like"};
  std::string input_image, real_dir, gen_dir;
  int hops = 8;

  auto* gen = app.add_subcommand("dataset-gen", "Write synthetic scenes as PNGs with a split manifest");
  add_common(gen, common);
  auto* train_cmd = app.add_subcommand("train", "Train the codec (if learned) and the denoiser");
  add_common(train_cmd, common);
  auto* sample = app.add_subcommand("sample", "Jointly generate every modality");
  add_common(sample, common);
  add_sampling(sample, sampling, true);
  auto* translate = app.add_subcommand("translate", "Generate target modalities from input images");
  add_common(translate, common);
  add_sampling(translate, sampling, true);
  translate->add_option("--input", inputs, "modality=path.png (repeatable)")->required();
  translate->add_option("--target", targets, "Modality to generate (repeatable; default: all others)");
  auto* loop = app.add_subcommand("loop", "Repeatedly translate around a modality cycle");
  add_common(loop, common);
  add_sampling(loop, sampling, false);
  loop->add_option("--input", input_image, "Image of the first cycle modality")->required();
  loop->add_option("--cycle", cycle, "Modality cycle")->delimiter(',');
  loop->add_option("--hops", hops, "Number of translations")->check(CLI::NonNegativeNumber);
  auto* evaluate = app.add_subcommand("evaluate", "FID and k-NN precision/recall between two PNG directories");
  add_common(evaluate, common);
  evaluate->add_option("--real", real_dir, "Directory of real images")->required();
  evaluate->add_option("--generated", gen_dir, "Directory of generated images")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    apply_thread_limit();
    const RunConfig config = load(common);
    const fs::path out = common.out;
    fs::create_directories(out);
    if (gen->parsed()) run_dataset_gen(config, out, std::cout);
    else if (train_cmd->parsed()) run_train(config, out, std::cout);
    else if (sample->parsed()) run_sample(config, sampling.checkpoint, sampling.overrides(), out, std::cout);
    else if (translate->parsed())
      run_translate(config, sampling.checkpoint, parse_inputs(inputs), targets, sampling.overrides(), out, std::cout);
    else if (loop->parsed())
      run_loop(config, sampling.checkpoint, input_image, cycle, hops, sampling.overrides(), out, std::cout);
    else if (evaluate->parsed()) run_evaluate(config, real_dir, gen_dir, out, std::cout);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
