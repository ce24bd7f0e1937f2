#include "dyndepth/dyndepth.h"

#include <cstdlib>
#include <cstring>
#include <algorithm>
#include <filesystem>
#include <iostream>
#include <memory>
#include <new>
#include <string>

#include "dyndepth/io.hpp"
#include "dyndepth/run.hpp"
#include "dyndepth/synthetic_cube.hpp"

struct dd_dataset {
  dyndepth::Sequence seq;
};

namespace {

thread_local std::string last_error;

dd_status status_of(dyndepth::ErrorKind kind) {
  using dyndepth::ErrorKind;
  switch (kind) {
    case ErrorKind::divergence: return DD_ERR_DIVERGED;
    case ErrorKind::numeric: return DD_ERR_NUMERIC;
    case ErrorKind::state: return DD_ERR_INTERNAL;
    default: return DD_ERR_INPUT;
  }
}

template <class F>
dd_status guarded(F&& body) {
  last_error.clear();
  try {
    body();
    return DD_OK;
  } catch (const dyndepth::Error& e) {
    last_error = e.what();
    return status_of(e.kind());
  } catch (const nlohmann::json::exception& e) {
    last_error = std::string("invalid JSON: ") + e.what();
    return DD_ERR_INPUT;
  } catch (const std::filesystem::filesystem_error& e) {
    last_error = e.what();
    return DD_ERR_INPUT;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return DD_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return DD_ERR_INTERNAL;
  }
}

bool missing(const void* p, const char* what) {
  if (p) return false;
  last_error = std::string(what) + " must not be NULL";
  return true;
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* dd_last_error(void) { return last_error.c_str(); }

const char* dd_version(void) { return "0.1.0"; }

void dd_free(char* p) { std::free(p); }

dd_status dd_generate_cube(const char* spec_json, const char* out_dir) {
  if (missing(out_dir, "out_dir")) return DD_ERR_INPUT;
  return guarded([&] {
    dyndepth::CubeSceneSpec spec;
    if (spec_json)
      spec = dyndepth::CubeSceneSpec::from_json(nlohmann::json::parse(spec_json));
    const dyndepth::CubeScene scene = dyndepth::generate(spec);
    dyndepth::save_sequence(out_dir, scene.seq);
  });
}

dd_status dd_dataset_open(const char* dir, dd_dataset** out) {
  if (missing(dir, "dir") || missing(out, "out")) return DD_ERR_INPUT;
  *out = nullptr;
  return guarded([&] {
    auto ds = std::make_unique<dd_dataset>();
    ds->seq = dyndepth::load_sequence(dir);
    *out = ds.release();
  });
}

void dd_dataset_close(dd_dataset* ds) { delete ds; }

int dd_dataset_frame_count(const dd_dataset* ds) {
  return ds ? ds->seq.frame_count() : 0;
}
int dd_dataset_width(const dd_dataset* ds) { return ds ? ds->seq.width() : 0; }
int dd_dataset_height(const dd_dataset* ds) {
  return ds ? ds->seq.height() : 0;
}

void dd_train_options_init(dd_train_options* o) {
  if (!o) return;
  const dyndepth::TrainConfig c;
  o->mode = "full";
  o->epochs = c.total_epochs;
  o->warmup_epochs = c.warmup_epochs;
  o->alpha = c.weights.alpha;
  o->beta = c.weights.beta;
  o->gamma = c.weights.gamma;
  o->lr_depth = c.lr_depth;
  o->lr_sceneflow = c.lr_sceneflow;
  o->seed = c.seed;
  o->unnormalized_losses = 0;
  o->bands = c.bands;
  o->hidden_layers = c.net_shape.hidden_layers;
  o->hidden_width = c.net_shape.hidden_width;
  o->resume = 0;
  o->verbose = 0;
}

dd_status dd_train(const char* dataset_dir, const char* out_dir,
                   const dd_train_options* opts) {
  if (missing(dataset_dir, "dataset_dir") || missing(out_dir, "out_dir") ||
      missing(opts, "opts"))
    return DD_ERR_INPUT;
  return guarded([&] {
    dyndepth::RunOptions r;
    r.dataset = dataset_dir;
    r.out = out_dir;
    dyndepth::TrainConfig& c = r.config;
    c.mode = dyndepth::parse_mode(opts->mode ? opts->mode : "full");
    c.total_epochs = opts->epochs;
    c.warmup_epochs = std::min(opts->warmup_epochs, opts->epochs);
    c.weights = {opts->alpha, opts->beta, opts->gamma};
    c.lr_depth = opts->lr_depth;
    c.lr_sceneflow = opts->lr_sceneflow;
    c.seed = opts->seed;
    c.normalized = opts->unnormalized_losses == 0;
    c.bands = opts->bands;
    c.net_shape = {opts->hidden_layers, opts->hidden_width};
    r.resume = opts->resume != 0;
    if (opts->verbose) r.log = &std::cerr;
    dyndepth::run_training(r);
  });
}

dd_status dd_evaluate(const char* run_dir, const char* gt_dataset_dir,
                      const char* region, char** json_out) {
  if (missing(run_dir, "run_dir") || missing(gt_dataset_dir, "gt_dataset_dir") ||
      missing(json_out, "json_out"))
    return DD_ERR_INPUT;
  *json_out = nullptr;
  return guarded([&] {
    const auto report = dyndepth::evaluate_run(
        run_dir, gt_dataset_dir,
        dyndepth::parse_region(region ? region : "all"));
    *json_out = copy_string(report.dump(2) + "\n");
  });
}

dd_status dd_export(const char* run_dir, const char* kind, int index,
                    const char* out_path) {
  if (missing(run_dir, "run_dir") || missing(kind, "kind") ||
      missing(out_path, "out_path"))
    return DD_ERR_INPUT;
  return guarded([&] {
    dyndepth::export_run(run_dir, dyndepth::parse_export_kind(kind), index,
                         out_path);
  });
}

}  // extern "C"
