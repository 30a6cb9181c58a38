// cravl command-line interface. Everything goes through the C API in
// cravl.h; exit codes mirror cravl_status (0 ok, 1 usage, 2 data,
// 3 numeric failure).

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cravl.h"

namespace {

int finish(cravl_status status) {
  if (status != CRAVL_OK) {
    std::fprintf(stderr, "error: %s\n", cravl_last_error());
  }
  return static_cast<int>(status);
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out.push_back(sep);
    out += p;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"content-rating vision-language toolkit"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  // gen-data
  std::string spec_path, out_dir;
  int64_t seed = -1;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic train/test dataset");
  gen->add_option("--spec", spec_path, "run config (INI)")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", seed, "override every seed in the config");

  // pretrain-text
  std::string pt_config, pt_data, pt_out;
  int64_t pt_seed = -1;
  auto* pretrain = app.add_subcommand("pretrain-text", "masked-token pretraining of the text encoder");
  pretrain->add_option("--config", pt_config, "run config (INI)")->required();
  pretrain->add_option("--data", pt_data, "dataset directory")->required();
  pretrain->add_option("--out", pt_out, "output text checkpoint")->required();
  pretrain->add_option("--seed", pt_seed, "override every seed in the config");

  // train
  std::string tr_config, tr_data, tr_out, tr_text, tr_resume;
  bool tr_random_frozen = false;
  int64_t tr_seed = -1;
  auto* train = app.add_subcommand("train", "train the joint vision-language model");
  train->add_option("--config", tr_config, "run config (INI)")->required();
  train->add_option("--data", tr_data, "dataset directory")->required();
  train->add_option("--out", tr_out, "output model checkpoint")->required();
  train->add_option("--text-ckpt", tr_text, "pretrained text encoder checkpoint");
  train->add_flag("--random-frozen", tr_random_frozen, "freeze a randomly initialized text encoder");
  train->add_option("--resume", tr_resume, "resume from a model checkpoint");
  train->add_option("--seed", tr_seed, "override every seed in the config");

  // grad-check
  std::string gc_ckpt;
  double gc_h = 1e-4, gc_lambda = 5.0, gc_tol = -1.0;
  int gc_samples = 120;
  uint64_t gc_seed = 42;
  auto* gc = app.add_subcommand("grad-check", "finite-difference check of the training objective");
  gc->add_option("--ckpt", gc_ckpt, "model checkpoint (omit for a toy model)");
  gc->add_option("--h", gc_h, "central-difference step");
  gc->add_option("--samples", gc_samples, "number of sampled parameters");
  gc->add_option("--seed", gc_seed, "rng seed");
  gc->add_option("--lambda", gc_lambda, "style loss weight in the objective");
  gc->add_option("--tol", gc_tol, "fail (exit 3) when max relative error exceeds this");

  // train-head
  std::string th_config, th_ckpt, th_data, th_out;
  int64_t th_seed = -1;
  auto* th = app.add_subcommand("train-head", "train the rating classifier on frozen embeddings");
  th->add_option("--config", th_config, "run config (INI)")->required();
  th->add_option("--ckpt", th_ckpt, "model checkpoint")->required();
  th->add_option("--data", th_data, "dataset directory")->required();
  th->add_option("--out", th_out, "output head checkpoint")->required();
  th->add_option("--seed", th_seed, "override every seed in the config");

  // predict
  std::string pr_ckpt, pr_head, pr_data, pr_out;
  int pr_threads = 1;
  int64_t pr_seed = -1;
  auto* pr = app.add_subcommand("predict", "per-app majority-vote rating predictions");
  pr->add_option("--ckpt", pr_ckpt, "model checkpoint")->required();
  pr->add_option("--head", pr_head, "head checkpoint")->required();
  pr->add_option("--data", pr_data, "dataset directory")->required();
  pr->add_option("--out", pr_out, "output predictions (JSONL)")->required();
  pr->add_option("--threads", pr_threads, "worker threads (output is order-stable)");
  pr->add_option("--seed", pr_seed, "accepted for interface uniformity; prediction is deterministic");

  // audit
  std::string au_pred, au_data, au_out;
  int au_min_severity = 2;
  int64_t au_seed = -1;
  auto* au = app.add_subcommand("audit", "flag report and review queues from predictions");
  au->add_option("--predictions", au_pred, "predictions JSONL")->required();
  au->add_option("--data", au_data, "dataset directory (validates app ids)");
  au->add_option("--out", au_out, "output report (JSON)")->required();
  au->add_option("--min-severity", au_min_severity, "queue filter threshold");
  au->add_option("--seed", au_seed, "accepted for interface uniformity; audit is deterministic");

  // deletion-rates
  std::string dr_pred, dr_data, dr_out;
  int64_t dr_seed = -1;
  auto* dr = app.add_subcommand("deletion-rates", "removal rates by download bucket and flag kind");
  dr->add_option("--predictions", dr_pred, "predictions JSONL")->required();
  dr->add_option("--data", dr_data, "dataset directory")->required();
  dr->add_option("--out", dr_out, "output table (CSV)")->required();
  dr->add_option("--seed", dr_seed, "accepted for interface uniformity; the table is deterministic");

  // viz-attention
  std::string vz_ckpt, vz_data, vz_app, vz_out;
  std::vector<std::string> vz_regions;
  int vz_image = 0, vz_k = 5, vz_head = 0, vz_layer = 0;
  int64_t vz_seed = -1;
  auto* vz = app.add_subcommand("viz-attention", "cross-attention token rankings and heatmaps");
  vz->add_option("--ckpt", vz_ckpt, "model checkpoint")->required();
  vz->add_option("--data", vz_data, "dataset directory")->required();
  vz->add_option("--app", vz_app, "app id")->required();
  vz->add_option("--image", vz_image, "image index (0 = icon)");
  vz->add_option("--region", vz_regions, "patch region, e.g. 0,1,8,9 (repeatable)");
  vz->add_option("--k", vz_k, "tokens per ranking");
  vz->add_option("--head", vz_head, "attention head");
  vz->add_option("--layer", vz_layer, "fusion block index");
  vz->add_option("--out", vz_out, "output directory")->required();
  vz->add_option("--seed", vz_seed, "accepted for interface uniformity; extraction is deterministic");

  // metrics
  std::string mt_cm;
  int64_t mt_seed = -1;
  auto* mt = app.add_subcommand("metrics", "precision/recall/F1/accuracy for a confusion matrix");
  mt->add_option("--cm", mt_cm, "confusion matrix (JSON)")->required();
  mt->add_option("--seed", mt_seed, "accepted for interface uniformity; metrics are deterministic");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints help or the parse error
    return 1;
  }

  if (gen->parsed()) {
    return finish(cravl_gen_data(spec_path.c_str(), out_dir.c_str(), seed));
  }
  if (pretrain->parsed()) {
    return finish(cravl_pretrain_text(pt_config.c_str(), pt_data.c_str(), pt_out.c_str(), pt_seed));
  }
  if (train->parsed()) {
    return finish(cravl_train(tr_config.c_str(), tr_data.c_str(), tr_out.c_str(),
                              tr_text.empty() ? nullptr : tr_text.c_str(),
                              tr_random_frozen ? 1 : 0,
                              tr_resume.empty() ? nullptr : tr_resume.c_str(), tr_seed));
  }
  if (gc->parsed()) {
    double err = 0;
    const cravl_status status = cravl_grad_check(gc_ckpt.empty() ? nullptr : gc_ckpt.c_str(), gc_h,
                                                 gc_samples, gc_seed, gc_lambda, &err);
    if (status != CRAVL_OK) return finish(status);
    std::printf("grad-check: max relative error %.3e over %d samples\n", err, gc_samples);
    if (gc_tol > 0 && err > gc_tol) {
      std::fprintf(stderr, "error: max relative error %.3e exceeds tolerance %.3e\n", err, gc_tol);
      return static_cast<int>(CRAVL_E_NUMERIC);
    }
    return 0;
  }
  if (th->parsed()) {
    return finish(
        cravl_train_head(th_config.c_str(), th_ckpt.c_str(), th_data.c_str(), th_out.c_str(), th_seed));
  }
  if (pr->parsed()) {
    cravl_model* model = nullptr;
    cravl_status status = cravl_model_open(pr_ckpt.c_str(), &model);
    if (status != CRAVL_OK) return finish(status);
    status = cravl_model_load_head(model, pr_head.c_str());
    if (status == CRAVL_OK) {
      status = cravl_model_predict(model, pr_data.c_str(), pr_out.c_str(), pr_threads);
    }
    cravl_model_close(model);
    return finish(status);
  }
  if (au->parsed()) {
    return finish(cravl_audit(au_pred.c_str(), au_data.empty() ? nullptr : au_data.c_str(),
                              au_out.c_str(), au_min_severity));
  }
  if (dr->parsed()) {
    return finish(cravl_deletion_rates(dr_pred.c_str(), dr_data.c_str(), dr_out.c_str()));
  }
  if (vz->parsed()) {
    cravl_model* model = nullptr;
    cravl_status status = cravl_model_open(vz_ckpt.c_str(), &model);
    if (status != CRAVL_OK) return finish(status);
    const std::string regions = join(vz_regions, ';');
    status = cravl_model_viz_attention(model, vz_data.c_str(), vz_app.c_str(), vz_image,
                                       regions.empty() ? nullptr : regions.c_str(), vz_k, vz_head,
                                       vz_layer, vz_out.c_str());
    cravl_model_close(model);
    return finish(status);
  }
  if (mt->parsed()) {
    char* json = nullptr;
    const cravl_status status = cravl_metrics(mt_cm.c_str(), &json);
    if (status != CRAVL_OK) return finish(status);
    std::printf("%s\n", json);
    cravl_free(json);
    return 0;
  }
  return 1;
}
