#pragma once

#include <optional>
#include <string>

#include "cravl/config.hpp"

namespace cravl::pipeline {

// Coarse pipeline stages behind the C API and the CLI. A negative
// seed_override keeps the seeds from the config file; otherwise it replaces
// the data/train/head seeds wholesale.

void gen_data(const std::string& config_path, const std::string& out_dir, int64_t seed_override);

void pretrain_text(const std::string& config_path, const std::string& data_dir,
                   const std::string& out_ckpt, int64_t seed_override);

void train(const std::string& config_path, const std::string& data_dir,
           const std::string& out_ckpt, const std::string& text_ckpt, bool random_frozen,
           const std::string& resume_ckpt, int64_t seed_override);

void train_head(const std::string& config_path, const std::string& model_ckpt,
                const std::string& data_dir, const std::string& out_head, int64_t seed_override);

void predict(const std::string& model_ckpt, const std::string& head_ckpt,
             const std::string& data_dir, const std::string& out_jsonl, int threads);

struct GradCheckSummary {
  double max_rel_err = 0;
  int n_checked = 0;
};

// Empty ckpt path checks a freshly initialized toy-dimension model.
GradCheckSummary run_grad_check(const std::string& ckpt_path, double h, int samples, uint64_t seed,
                                double lambda);

// data_dir may be empty; when given, every prediction must reference an app
// in its manifest.
void audit(const std::string& predictions_path, const std::string& data_dir,
           const std::string& out_json, int min_severity);

void deletion_rates(const std::string& predictions_path, const std::string& data_dir,
                    const std::string& out_csv);

// regions: semicolon-separated patch-index lists, e.g. "0,1,8;62,63".
void viz_attention(const std::string& model_ckpt, const std::string& data_dir,
                   const std::string& app_id, int image_index, const std::string& regions, int k,
                   int head, int layer, const std::string& out_dir);

// Formatted metrics JSON for a confusion-matrix file.
std::string metrics_report(const std::string& cm_path);

// ---------------------------------------------------------------------------
// Loaded-model entry points (shared with the C API handle)
// ---------------------------------------------------------------------------

template <typename T>
void predict_records(Model<T>& model, Head<T>& head, const std::vector<AppRecord>& records,
                     const std::string& data_dir, const std::string& out_jsonl, int threads);

template <typename T>
void viz_records(Model<T>& model, const std::vector<AppRecord>& records,
                 const std::string& data_dir, const std::string& app_id, int image_index,
                 const std::string& regions, int k, int head, int layer,
                 const std::string& out_dir);

}  // namespace cravl::pipeline
