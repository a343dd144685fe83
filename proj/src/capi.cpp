#include "stein_cv/stein_cv.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "stein_cv/config.hpp"
#include "stein_cv/error.hpp"
#include "stein_cv/harness.hpp"

struct scv_config {
  steincv::ExperimentConfig config;
};

struct scv_report {
  steincv::CsvReport report;
};

namespace {

thread_local std::string last_error;

scv_status StatusFor(steincv::ErrorCode code) {
  using steincv::ErrorCode;
  switch (code) {
    case ErrorCode::kInvalidArgument: return SCV_ERR_INVALID_ARGUMENT;
    case ErrorCode::kDimension: return SCV_ERR_DIMENSION;
    case ErrorCode::kUnsupported: return SCV_ERR_UNSUPPORTED;
    case ErrorCode::kNumeric: return SCV_ERR_NUMERIC;
    case ErrorCode::kDivergence: return SCV_ERR_DIVERGENCE;
    case ErrorCode::kConfig: return SCV_ERR_CONFIG;
    case ErrorCode::kIo: return SCV_ERR_IO;
  }
  return SCV_ERR_INTERNAL;
}

template <typename F>
scv_status Guard(F&& f) {
  last_error.clear();
  try {
    return f();
  } catch (const steincv::Error& e) {
    last_error = e.what();
    return StatusFor(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
  } catch (const std::exception& e) {
    last_error = e.what();
  } catch (...) {
    last_error = "unknown exception";
  }
  return SCV_ERR_INTERNAL;
}

scv_status Null(const char* what) {
  last_error = std::string(what) + " is null";
  return SCV_ERR_INVALID_ARGUMENT;
}

char* CopyString(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* scv_version(void) { return "0.1.0"; }

const char* scv_status_string(scv_status status) {
  switch (status) {
    case SCV_OK: return "ok";
    case SCV_CHECK_FAILED: return "identity check failed";
    case SCV_ERR_CONFIG: return "config error";
    case SCV_ERR_INVALID_ARGUMENT: return "invalid argument";
    case SCV_ERR_DIMENSION: return "dimension mismatch";
    case SCV_ERR_UNSUPPORTED: return "unsupported";
    case SCV_ERR_NUMERIC: return "numeric failure";
    case SCV_ERR_DIVERGENCE: return "divergence";
    case SCV_ERR_IO: return "i/o error";
    case SCV_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* scv_last_error(void) { return last_error.c_str(); }

scv_status scv_config_load(const char* path, scv_config** out) {
  if (!path) return Null("path");
  if (!out) return Null("out");
  return Guard([&] {
    *out = new scv_config{steincv::ExperimentConfig::Load(path)};
    return SCV_OK;
  });
}

scv_status scv_config_parse(const char* text, scv_config** out) {
  if (!text) return Null("text");
  if (!out) return Null("out");
  return Guard([&] {
    *out = new scv_config{steincv::ExperimentConfig::Parse(text)};
    return SCV_OK;
  });
}

scv_status scv_config_set_kind(scv_config* config, scv_experiment kind) {
  if (!config) return Null("config");
  switch (kind) {
    case SCV_VARIANCE_EVAL: config->config.kind = steincv::ExperimentKind::kVarianceEval; break;
    case SCV_TRAIN: config->config.kind = steincv::ExperimentKind::kTrain; break;
    case SCV_IDENTITY_CHECK: config->config.kind = steincv::ExperimentKind::kIdentityCheck; break;
    default:
      last_error = "unknown experiment kind";
      return SCV_ERR_INVALID_ARGUMENT;
  }
  return SCV_OK;
}

scv_status scv_config_set_seed(scv_config* config, uint64_t seed) {
  if (!config) return Null("config");
  config->config.seed = seed;
  config->config.seeds = {seed};
  return SCV_OK;
}

scv_status scv_config_set_threads(scv_config* config, int threads) {
  if (!config) return Null("config");
  if (threads < 1) {
    last_error = "threads must be >= 1";
    return SCV_ERR_INVALID_ARGUMENT;
  }
  config->config.threads = threads;
  return SCV_OK;
}

scv_status scv_config_render(const scv_config* config, char** out) {
  if (!config) return Null("config");
  if (!out) return Null("out");
  return Guard([&] {
    *out = CopyString(config->config.Render());
    return SCV_OK;
  });
}

scv_status scv_config_hash(const scv_config* config, char out[17]) {
  if (!config) return Null("config");
  if (!out) return Null("out");
  return Guard([&] {
    const std::string h = config->config.Hash();
    std::memcpy(out, h.c_str(), 17);
    return SCV_OK;
  });
}

void scv_config_free(scv_config* config) { delete config; }

scv_status scv_run(const scv_config* config, scv_report** out) {
  if (!config) return Null("config");
  if (!out) return Null("out");
  return Guard([&] {
    *out = new scv_report{steincv::RunExperiment(config->config)};
    return SCV_OK;
  });
}

int scv_report_all_passed(const scv_report* report) {
  return report && report->report.all_passed ? 1 : 0;
}

size_t scv_report_num_rows(const scv_report* report) {
  return report ? report->report.rows.size() : 0;
}

scv_status scv_report_csv(const scv_report* report, char** out) {
  if (!report) return Null("report");
  if (!out) return Null("out");
  return Guard([&] {
    *out = CopyString(report->report.Text());
    return SCV_OK;
  });
}

scv_status scv_report_write(const scv_report* report, const char* path) {
  if (!report) return Null("report");
  if (!path) return Null("path");
  return Guard([&] {
    report->report.Write(path);
    return SCV_OK;
  });
}

void scv_report_free(scv_report* report) { delete report; }

void scv_string_free(char* s) { std::free(s); }

}  // extern "C"
