#pragma once

#include <string>

#include "cravl/head.hpp"
#include "cravl/synth.hpp"
#include "cravl/trainer.hpp"

namespace cravl {

// Effective run configuration, parsed from INI-style `key = value` sections.
// Unknown sections or keys are rejected; every key has a default, so a
// minimal file (or an empty one) is valid.
struct RunConfig {
  // [data]
  int n_train_apps = 2000;
  int n_test_apps = 500;
  DataSpec data;

  // [model]
  ModelDims dims;  // vocab is always the fixed synthetic vocabulary
  bool style_encoder = true;
  bool cross_attention = true;
  TextPretrainConfig pretrain;

  // [train]
  TrainConfig train;
  LossVariant loss = LossVariant::SigCL;

  // [head]
  HeadConfig head;

  // [audit]
  int min_severity = 2;

  static RunConfig load(const std::string& path);
  static RunConfig parse(const std::string& text, const std::string& origin);

  // Canonical INI text with every effective key; written next to run
  // artifacts for provenance.
  std::string echo() const;

  void validate() const;
};

// Writes cfg.echo() to <path>.
void echo_config(const RunConfig& cfg, const std::string& path);

}  // namespace cravl
