#include "cravl.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <variant>

#include "cravl/pipeline.hpp"

namespace {

thread_local std::string g_last_error;

const char* or_empty(const char* s) { return s ? s : ""; }

template <typename F>
cravl_status wrap(F&& fn) {
  try {
    fn();
    g_last_error.clear();
    return CRAVL_OK;
  } catch (const cravl::UsageError& e) {
    g_last_error = e.what();
    return CRAVL_E_USAGE;
  } catch (const cravl::NumericError& e) {
    g_last_error = e.what();
    return CRAVL_E_NUMERIC;
  } catch (const cravl::DataError& e) {
    g_last_error = e.what();
    return CRAVL_E_DATA;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CRAVL_E_DATA;
  }
}

void require(const char* value, const char* what) {
  if (!value || !*value) throw cravl::UsageError(std::string(what) + " is required");
}

}  // namespace

struct cravl_model {
  std::variant<cravl::Model<float>, cravl::Model<double>> model;
  std::optional<std::variant<cravl::Head<float>, cravl::Head<double>>> head;
};

extern "C" {

const char* cravl_version(void) { return "0.1.0"; }

const char* cravl_last_error(void) { return g_last_error.c_str(); }

void cravl_free(char* ptr) { std::free(ptr); }

cravl_status cravl_gen_data(const char* config_path, const char* out_dir, int64_t seed_override) {
  return wrap([&] {
    require(config_path, "config path");
    require(out_dir, "output directory");
    cravl::pipeline::gen_data(config_path, out_dir, seed_override);
  });
}

cravl_status cravl_pretrain_text(const char* config_path, const char* data_dir,
                                 const char* out_ckpt, int64_t seed_override) {
  return wrap([&] {
    require(config_path, "config path");
    require(data_dir, "data directory");
    require(out_ckpt, "output checkpoint path");
    cravl::pipeline::pretrain_text(config_path, data_dir, out_ckpt, seed_override);
  });
}

cravl_status cravl_train(const char* config_path, const char* data_dir, const char* out_ckpt,
                         const char* text_ckpt, int random_frozen, const char* resume_ckpt,
                         int64_t seed_override) {
  return wrap([&] {
    require(config_path, "config path");
    require(data_dir, "data directory");
    require(out_ckpt, "output checkpoint path");
    cravl::pipeline::train(config_path, data_dir, out_ckpt, or_empty(text_ckpt),
                           random_frozen != 0, or_empty(resume_ckpt), seed_override);
  });
}

cravl_status cravl_train_head(const char* config_path, const char* model_ckpt,
                              const char* data_dir, const char* out_head, int64_t seed_override) {
  return wrap([&] {
    require(config_path, "config path");
    require(model_ckpt, "model checkpoint path");
    require(data_dir, "data directory");
    require(out_head, "output head path");
    cravl::pipeline::train_head(config_path, model_ckpt, data_dir, out_head, seed_override);
  });
}

cravl_status cravl_audit(const char* predictions_path, const char* data_dir, const char* out_json,
                         int min_severity) {
  return wrap([&] {
    require(predictions_path, "predictions path");
    require(out_json, "output path");
    cravl::pipeline::audit(predictions_path, or_empty(data_dir), out_json, min_severity);
  });
}

cravl_status cravl_deletion_rates(const char* predictions_path, const char* data_dir,
                                  const char* out_csv) {
  return wrap([&] {
    require(predictions_path, "predictions path");
    require(data_dir, "data directory");
    require(out_csv, "output path");
    cravl::pipeline::deletion_rates(predictions_path, data_dir, out_csv);
  });
}

cravl_status cravl_metrics(const char* cm_path, char** out_json) {
  return wrap([&] {
    require(cm_path, "confusion matrix path");
    if (!out_json) throw cravl::UsageError("out_json is required");
    const std::string text = cravl::pipeline::metrics_report(cm_path);
    char* copy = static_cast<char*>(std::malloc(text.size() + 1));
    if (!copy) throw std::bad_alloc();
    std::memcpy(copy, text.c_str(), text.size() + 1);
    *out_json = copy;
  });
}

cravl_status cravl_grad_check(const char* ckpt_path, double h, int samples, uint64_t seed,
                              double lambda, double* out_max_rel_err) {
  return wrap([&] {
    if (h <= 0) throw cravl::UsageError("h must be positive");
    if (samples < 2) throw cravl::UsageError("samples must be at least 2");
    const auto summary =
        cravl::pipeline::run_grad_check(or_empty(ckpt_path), h, samples, seed, lambda);
    if (out_max_rel_err) *out_max_rel_err = summary.max_rel_err;
  });
}

cravl_status cravl_model_open(const char* ckpt_path, cravl_model** out_model) {
  return wrap([&] {
    require(ckpt_path, "checkpoint path");
    if (!out_model) throw cravl::UsageError("out_model is required");
    const cravl::Checkpoint c = cravl::Checkpoint::read(ckpt_path);
    auto handle = std::make_unique<cravl_model>();
    if (c.i64("precision") == 1) {
      handle->model.emplace<cravl::Model<float>>();
      cravl::model_from_checkpoint(c, std::get<cravl::Model<float>>(handle->model));
    } else {
      handle->model.emplace<cravl::Model<double>>();
      cravl::model_from_checkpoint(c, std::get<cravl::Model<double>>(handle->model));
    }
    *out_model = handle.release();
  });
}

void cravl_model_close(cravl_model* model) { delete model; }

cravl_status cravl_model_load_head(cravl_model* model, const char* head_ckpt) {
  return wrap([&] {
    if (!model) throw cravl::UsageError("model handle is null");
    require(head_ckpt, "head checkpoint path");
    const cravl::Checkpoint c = cravl::Checkpoint::read(head_ckpt);
    std::visit(
        [&](auto& m) {
          using T = typename std::decay_t<decltype(m)>::Scalar;
          cravl::Head<T> head;
          cravl::head_from_checkpoint(c, head);
          if (head.d_joint != m.dims.d_joint) {
            throw cravl::DataError("head checkpoint dimension does not match the model");
          }
          model->head = std::move(head);
        },
        model->model);
  });
}

cravl_status cravl_model_predict(cravl_model* model, const char* data_dir, const char* out_jsonl,
                                 int threads) {
  return wrap([&] {
    if (!model) throw cravl::UsageError("model handle is null");
    require(data_dir, "data directory");
    require(out_jsonl, "output path");
    if (!model->head) throw cravl::UsageError("no head loaded; call cravl_model_load_head first");
    const auto records = cravl::read_manifest(std::string(data_dir) + "/manifest.jsonl");
    std::visit(
        [&](auto& m) {
          using T = typename std::decay_t<decltype(m)>::Scalar;
          auto* head = std::get_if<cravl::Head<T>>(&*model->head);
          if (!head) throw cravl::DataError("head precision does not match the model");
          cravl::pipeline::predict_records(m, *head, records, data_dir, out_jsonl, threads);
        },
        model->model);
  });
}

cravl_status cravl_model_viz_attention(cravl_model* model, const char* data_dir,
                                       const char* app_id, int image_index, const char* regions,
                                       int k, int head, int layer, const char* out_dir) {
  return wrap([&] {
    if (!model) throw cravl::UsageError("model handle is null");
    require(data_dir, "data directory");
    require(app_id, "app id");
    require(out_dir, "output directory");
    const auto records = cravl::read_manifest(std::string(data_dir) + "/manifest.jsonl");
    std::visit(
        [&](auto& m) {
          cravl::pipeline::viz_records(m, records, data_dir, app_id, image_index,
                                       or_empty(regions), k, head, layer, out_dir);
        },
        model->model);
  });
}

}  // extern "C"
