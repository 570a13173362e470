#include "mi2v/cli.hpp"

#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "mi2v/attention.hpp"
#include "mi2v/config.hpp"
#include "mi2v/error.hpp"
#include "mi2v/io.hpp"
#include "mi2v/rng.hpp"
#include "mi2v/verify.hpp"

namespace mi2v {

namespace {

// Salt separating the synthesized reference frame from the sampler noise.
constexpr std::uint64_t kReferenceSalt = 0x5EEDF00Dull;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string strategy;
  std::string out_path;
};

RunConfig load_config(const Common& c) {
  return c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
}

void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_text(path, text);
  }
}

int run_verify(const Common& c, bool fault, std::ostream& out, std::ostream& err) {
  if (!c.config_path.empty()) load_config(c);
  testing::set_streaming_fault(fault);
  VerifyReport report;
  try {
    report = run_verify_suite();
  } catch (...) {
    testing::set_streaming_fault(false);
    throw;
  }
  testing::set_streaming_fault(false);
  emit(c.out_path, report.to_json() + "\n", out);
  for (const auto& check : report.checks)
    if (!check.passed) err << "FAILED " << check.name << ": " << check.detail << "\n";
  return report.all_passed() ? kExitOk : kExitFailed;
}

int run_bench(const Common& c, const std::vector<std::int64_t>& lengths, std::optional<int> reps,
              const std::vector<std::string>& kinds, std::ostream& out) {
  RunConfig rc = load_config(c);
  auto& b = rc.bench;
  if (!c.strategy.empty()) b.strategies = {ExecStrategy::parse(c.strategy)};
  if (!lengths.empty()) b.lengths = lengths;
  if (reps) b.reps = *reps;
  if (!kinds.empty()) {
    b.kinds.clear();
    for (const auto& k : kinds) b.kinds.push_back(parse_attention_kind(k));
  }
  if (c.seed) b.seed = *c.seed;
  require(b.reps >= 3, "bench-attn", "--reps must be at least 3");
  std::ostringstream csv;
  csv << "kind,strategy,length,reps,median_ns,min_ns\n";
  for (auto kind : b.kinds)
    for (const auto& s : b.strategies) {
      Rng rng(b.seed);
      for (const auto& row : bench_attention(kind, s, b.lengths, b.reps, rng, b.shape))
        csv << to_string(row.kind) << ',' << row.strategy.name() << ',' << row.length << ',' << row.reps << ','
            << row.median_ns << ',' << row.min_ns << '\n';
    }
  emit(c.out_path, csv.str(), out);
  return kExitOk;
}

struct GenerateFlags {
  std::string spec, mode, reference, weights, preview_prefix;
  std::optional<int> steps;
  std::optional<float> motion;
};

int run_generate(const Common& c, const GenerateFlags& f, std::ostream& out) {
  RunConfig rc = load_config(c);
  auto& g = rc.sampler;
  if (!f.spec.empty()) g.spec = LatentSpec::parse(f.spec);
  if (f.steps) g.sampler.steps = *f.steps;
  if (f.motion) g.motion = *f.motion;
  if (!f.mode.empty()) g.sampler.mode = parse_prediction_mode(f.mode);
  if (c.seed) g.seed = *c.seed;
  if (!c.strategy.empty()) rc.denoiser.strategy = ExecStrategy::parse(c.strategy);
  require(g.sampler.steps >= 1, "generate", "--steps must be at least 1");
  require(!c.out_path.empty(), "generate", "--out is required");
  g.spec.validate();

  const DenoiserWeights weights =
      f.weights.empty() ? init_weights(rc.denoiser, rc.weights_seed) : load_weights(f.weights, rc.denoiser);

  const std::int64_t frame = g.spec.frame_tokens();
  Tensor reference;
  if (f.reference.empty()) {
    Rng rng(g.seed ^ kReferenceSalt);
    reference = random_normal(rng, {frame, LatentSpec::kChannels});
  } else {
    const auto entries = tensor_io_load(f.reference);
    reference = find_entry(entries, "reference");
    require(reference.rank() == 2 && reference.dim(0) == frame && reference.dim(1) == LatentSpec::kChannels,
            "generate", "reference must be (" + std::to_string(frame) + ", 128), got " + to_string(reference.dims()));
  }

  const auto model = make_denoiser_model(weights, rc.denoiser, g.spec);
  const Tensor latent = euler_sample_i2v(model, g.spec, g.sampler, reference, g.motion, g.seed);
  tensor_io_save(c.out_path, {{"latent", latent}});

  if (!f.preview_prefix.empty()) {
    for (std::int64_t t = 0; t < g.spec.latent_frames(); ++t) {
      Tensor slice({frame, LatentSpec::kChannels});
      std::copy_n(latent.data() + t * frame * LatentSpec::kChannels, slice.size(), slice.data());
      write_file(f.preview_prefix + "_" + std::to_string(t) + ".pgm", emit_pgm_preview(slice, g.spec));
    }
  }
  out << "wrote " << c.out_path << ": latent " << to_string(latent.dims()) << " (" << g.spec.to_string() << ", "
      << g.sampler.steps << " steps, " << to_string(g.sampler.mode) << ")\n";
  return kExitOk;
}

int run_distill(const Common& c, std::optional<int> iterations, const std::string& losses, std::ostream& out) {
  RunConfig rc = load_config(c);
  auto& t = rc.distill_toy;
  if (iterations) t.iterations = *iterations;
  if (c.seed) t.seeds.train = *c.seed;
  if (!losses.empty()) {
    t.switches = {false, false, false};
    std::stringstream ss(losses);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item == "reg") t.switches.reg = true;
      else if (item == "adv") t.switches.adv = true;
      else if (item == "dm") t.switches.dm = true;
      else fail("distill-toy", "unknown loss '" + item + "' (reg, adv, dm)");
    }
  }
  t.validate();
  emit(c.out_path, toy::toy_distill_run(t).to_json() + "\n", out);
  return kExitOk;
}

int run_params(const Common& c, const std::string& preset, std::ostream& out) {
  RunConfig rc = load_config(c);
  if (!preset.empty()) rc.denoiser = denoiser_preset(preset);
  out << parameter_count(rc.denoiser) << "\n";
  return kExitOk;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mobile image-to-video reference toolkit", "mi2v"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "RunConfig JSON file")->check(CLI::ExistingFile);
    sub->add_option("--out", common.out_path, "Output path ('-' for stdout where textual)");
  };

  auto* verify = app.add_subcommand("verify", "Run every invariant check and write a JSON report");
  add_common(verify);
  bool fault = false;
  verify->add_flag("--inject-streaming-fault", fault)->group("");

  auto* bench = app.add_subcommand("bench-attn", "Time attention kernels and write a CSV table");
  add_common(bench);
  std::vector<std::int64_t> lengths;
  std::optional<int> reps;
  std::vector<std::string> kinds;
  bench->add_option("--seed", common.seed);
  bench->add_option("--strategy", common.strategy, "baseline|4dc|ht|rdm|all or a '+' combination");
  bench->add_option("--lengths", lengths)->delimiter(',');
  bench->add_option("--reps", reps)->check(CLI::Range(3, 1000000));
  bench->add_option("--kinds", kinds)->delimiter(',');

  auto* generate = app.add_subcommand("generate", "Sample an image-to-video latent");
  add_common(generate);
  GenerateFlags gen;
  generate->add_option("--seed", common.seed);
  generate->add_option("--strategy", common.strategy);
  generate->add_option("--spec", gen.spec, "Output video size WxHxT, e.g. 1280x720x17");
  generate->add_option("--steps", gen.steps)->check(CLI::PositiveNumber);
  generate->add_option("--motion", gen.motion);
  generate->add_option("--mode", gen.mode, "velocity|noise");
  generate->add_option("--reference", gen.reference, "Container with a 'reference' entry")->check(CLI::ExistingFile);
  generate->add_option("--weights", gen.weights, "Denoiser weight container")->check(CLI::ExistingFile);
  generate->add_option("--preview-prefix", gen.preview_prefix, "Write PREFIX_<frame>.pgm per latent frame");

  auto* distill = app.add_subcommand("distill-toy", "Run the 2D toy distillation and write metrics JSON");
  add_common(distill);
  std::optional<int> iterations;
  std::string losses;
  distill->add_option("--seed", common.seed);
  distill->add_option("--iterations", iterations)->check(CLI::NonNegativeNumber);
  distill->add_option("--losses", losses, "Comma list drawn from reg,adv,dm");

  auto* params = app.add_subcommand("params", "Print the denoiser parameter count");
  params->add_option("--config", common.config_path)->check(CLI::ExistingFile);
  std::string preset;
  params->add_option("--preset", preset, "micro|desk|full");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "mi2v: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (verify->parsed()) return run_verify(common, fault, out, err);
    if (bench->parsed()) return run_bench(common, lengths, reps, kinds, out);
    if (generate->parsed()) return run_generate(common, gen, out);
    if (distill->parsed()) return run_distill(common, iterations, losses, out);
    return run_params(common, preset, out);
  } catch (const Error& e) {
    err << "mi2v: " << e.what() << "\n";
    return kExitFailed;
  }
}

}  // namespace mi2v
