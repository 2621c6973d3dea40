// Command-line front end. Talks to the library only through vaemmd.h.
#include <CLI11.hpp>
#include <cstdio>
#include <string>

#include "vaemmd.h"

namespace {

int report(int status) {
  if (status == VAEMMD_OK) {
    std::printf("%s\n", vaemmd_last_result());
  } else {
    std::fprintf(stderr, "error: %s\n", vaemmd_last_error());
  }
  return status;
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VAE-MMD domain adaptation toolkit"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Maximum worker threads")->check(CLI::PositiveNumber);
  app.set_version_flag("--version", std::string(vaemmd_version()));

  std::string config, out, manifest, checkpoint, vae_checkpoint, seg_checkpoint, split = "test", method = "pca",
                                                                                  variant = "raw";
  uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-phantoms", "Generate a phantom dataset and its manifest");
  gen->add_option("--config", config, "Experiment config (JSON)")->required();
  gen->add_option("--out", out, "Output directory")->required();

  auto* tv = app.add_subcommand("train-vae", "Train the VAE-MMD model");
  tv->add_option("--config", config)->required();
  tv->add_option("--manifest", manifest)->required();
  tv->add_option("--out", out)->required();

  auto* rec = app.add_subcommand("reconstruct", "Reconstruct a split and tabulate PSNR/MSE");
  rec->add_option("--checkpoint", checkpoint)->required();
  rec->add_option("--manifest", manifest)->required();
  rec->add_option("--out", out)->required();
  rec->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));

  auto* emb = app.add_subcommand("embed", "2-D projection of raw features and latent means");
  emb->add_option("--checkpoint", checkpoint)->required();
  emb->add_option("--manifest", manifest)->required();
  emb->add_option("--method", method)->check(CLI::IsMember({"pca", "tsne"}));
  emb->add_option("--seed", seed);
  emb->add_option("--out", out)->required();

  auto* ed = app.add_subcommand("eval-domain", "Domain classifier before and after adaptation");
  ed->add_option("--checkpoint", checkpoint)->required();
  ed->add_option("--manifest", manifest)->required();
  ed->add_option("--config", config, "Optional experiment config for evaluation options");
  ed->add_option("--out", out)->required();

  auto* ts = app.add_subcommand("train-seg", "Train the U-Net segmenter");
  ts->add_option("--config", config)->required();
  ts->add_option("--manifest", manifest)->required();
  ts->add_option("--variant", variant)->check(CLI::IsMember({"raw", "vae"}));
  ts->add_option("--vae-checkpoint", vae_checkpoint);
  ts->add_option("--out", out)->required();

  auto* es = app.add_subcommand("eval-seg", "Evaluate a segmenter on the test split");
  es->add_option("--seg-checkpoint", seg_checkpoint)->required();
  es->add_option("--manifest", manifest)->required();
  es->add_option("--config", config, "Optional experiment config for evaluation options");
  es->add_option("--out", out)->required();

  auto* rep = app.add_subcommand("reproduce", "Run the full ladder and write the comparison table");
  rep->add_option("--config", config)->required();
  rep->add_option("--out", out, "Output directory (default: ./run)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : VAEMMD_ERR_CONFIG;
  }
  if (vaemmd_set_threads(threads) != VAEMMD_OK) return report(VAEMMD_ERR_CONFIG);

  if (*gen) return report(vaemmd_gen_phantoms(config.c_str(), out.c_str()));
  if (*tv) return report(vaemmd_train_vae(config.c_str(), manifest.c_str(), out.c_str()));
  if (*rec) return report(vaemmd_reconstruct(checkpoint.c_str(), manifest.c_str(), out.c_str(), split.c_str()));
  if (*emb) return report(vaemmd_embed(checkpoint.c_str(), manifest.c_str(), method.c_str(), out.c_str(), seed));
  if (*ed) return report(vaemmd_eval_domain(checkpoint.c_str(), manifest.c_str(), out.c_str(), opt(config)));
  if (*ts)
    return report(
        vaemmd_train_seg(config.c_str(), manifest.c_str(), variant.c_str(), opt(vae_checkpoint), out.c_str()));
  if (*es) return report(vaemmd_eval_seg(seg_checkpoint.c_str(), manifest.c_str(), out.c_str(), opt(config)));
  if (*rep) return report(vaemmd_reproduce(config.c_str(), out.empty() ? "run" : out.c_str()));
  return VAEMMD_ERR_CONFIG;
}
