#pragma once

#include "slimdiff/distill.hpp"
#include "slimdiff/metrics.hpp"
#include "slimdiff/prune.hpp"
#include "slimdiff/scenes.hpp"
#include "slimdiff/schedule.hpp"
#include "slimdiff/spec_json.hpp"
#include "slimdiff/uncertainty.hpp"
#include "slimdiff/unet.hpp"
#include "slimdiff/vae.hpp"

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace slimdiff::harness {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct AcceptanceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class TeacherMode { fixed_t, adaptive };

struct DataConfig {
    int train_scenes = 48;
    int val_scenes = 16;
    Index hr_size = 48;
    Index scale = 4;
};

struct PretrainConfig {
    int vae_iterations = 400;
    double vae_lr = 0.02;
    int ue_iterations = 300;
    double ue_lr = 0.01;
    int batch_size = 4;
};

struct DistillStageConfig {
    bool enable_mse = true;
    bool enable_mmd = true;
    double lambda_mmd = 0.1;
    Index max_mmd_samples = 1024;
    int iterations = 400;
    double learning_rate = 0.004;
};

struct RunConfig {
    int schema_version = 1;
    std::uint64_t seed = 1;
    int iterations = 500;
    int batch_size = 2;
    double learning_rate = 0.01;
    double lambda_tv = 0.01;
    TeacherMode teacher_mode = TeacherMode::adaptive;
    double fixed_t = 250.0;
    std::optional<double> pinned_alpha;  // adaptive plumbing with a constant noise level
    ScheduleKind schedule_kind = ScheduleKind::linear;
    int schedule_T = 1000;
    int log_every = 10;
    DataConfig data;
    PretrainConfig pretrain;
    DistillStageConfig distill;
    ToyUNetSpec teacher_spec;
    ToyUNetSpec student_spec;
    ToyVAESpec vae_spec;

    static RunConfig reference();
    void validate() const;
};

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig load_config(const std::string& path);

/// Everything the teacher stage produces and the student stage consumes.
struct TeacherBundle {
    RunConfig cfg;
    NoiseSchedule sched;
    ToyVAE<double> vae;
    UncertaintyEstimator<double> ue;
    PredictorNet<double> pred;  // engaged in adaptive mode only
    ToyUNet<double> unet;
    Index latent_h = 0, latent_w = 0;
};

struct CurvePoint {
    int iteration = 0;
    double rec = 0;
    double tv = 0;
    double mse_dis = 0;
    double mmd_dis = 0;
    double total = 0;
};

struct EvalResult {
    double rec_l1 = 0;
    double psnr = 0;
    double ssim = 0;
    double uncertainty_directional_fraction = 0;  // textured > homogeneous share
};

struct TeacherReport {
    std::vector<CurvePoint> curves;
    EvalResult val;
    std::int64_t unet_params = 0;
    std::int64_t unet_macs = 0;
    double mean_iter_seconds = 0;
    double pretrain_vae_loss = 0;
    double pretrain_ue_loss = 0;
};

struct StudentBundle {
    ToyVAE<double> vae;  // full fine-tuned copy
    ToyUNet<double> unet;
    std::vector<FeatureAdapter<double>> adapters;
};

struct DistillRunReport {
    std::vector<CurvePoint> curves;
    EvalResult val;
    EvalResult teacher_val;
    std::int64_t teacher_unet_params = 0;
    std::int64_t student_unet_params = 0;
    std::int64_t teacher_pipeline_macs = 0;
    std::int64_t student_pipeline_macs = 0;
    double mean_iter_seconds = 0;
};

// dataset of frozen per-scene tensors shared by both stages
struct LatentDataset {
    std::vector<SynthScene> train, val;
    std::vector<Tensord> train_lr_up, val_lr_up;    // bicubic-upsampled LR inputs
    std::vector<Tensord> train_z_lr, val_z_lr;      // frozen encoder latents
    std::vector<Tensord> train_z_gt, val_z_gt;
    std::vector<Tensord> train_z_var, val_z_var;    // frozen UE variance maps
    std::vector<Tensord> train_s, val_s;            // frozen UE log-variance maps
};

SceneParams scene_params(const RunConfig& cfg);

/// Stage-1 entry: pretrains the autoencoder and the uncertainty estimator,
/// freezes both, then trains the (fixed or adaptive) single-step teacher.
TeacherBundle train_teacher(const RunConfig& cfg, TeacherReport& report);

/// Stage-2 entry: builds the pruned, operator-replaced student with fused
/// boundary convs, distills against the frozen teacher, reports.
StudentBundle distill_student(const RunConfig& cfg, TeacherBundle& teacher,
                              DistillRunReport& report);

EvalResult eval_teacher(TeacherBundle& teacher, const LatentDataset& data);

// checkpoint container: named parameter tensors plus a JSON meta blob
void save_teacher_checkpoint(const std::string& path, TeacherBundle& bundle);
TeacherBundle load_teacher_checkpoint(const std::string& path);
void save_student_checkpoint(const std::string& path, const RunConfig& cfg, StudentBundle& bundle);

// run-directory writers
void write_run_dir(const std::string& dir, const std::string& config_text,
                   const nlohmann::json& report, const std::vector<CurvePoint>& curves);
nlohmann::json teacher_report_json(const RunConfig& cfg, const TeacherReport& r);
nlohmann::json distill_report_json(const RunConfig& cfg, const DistillRunReport& r);

LatentDataset build_dataset(const RunConfig& cfg, TeacherBundle& bundle);

}  // namespace slimdiff::harness
