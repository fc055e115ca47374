#pragma once

#include <string>

#include "vitssp/augment.hpp"
#include "vitssp/finetune.hpp"
#include "vitssp/ssp.hpp"
#include "vitssp/vit.hpp"

namespace vitssp {

// Everything a run needs, loadable from one INI file with sections
// [pretrain] [finetune] [augment.pretrain] [augment.finetune] [model] [data].
// Unknown sections or keys are configuration errors; parse -> serialize ->
// parse is the identity.
struct RunConfig {
    PretrainConfig pretrain;
    FinetuneConfig finetune;
    AugmentSpec augment_pretrain = AugmentSpec::pretrain();
    AugmentSpec augment_finetune = AugmentSpec::finetune();
    ViTConfig model = ViTConfig::preset("vit-base");

    std::string train_path;
    std::string test_path;
    std::string out_dir = "out";
    uint64_t seed = 42;
    DType precision = DType::F64;
    double label_fraction = 0.0;  // 0 disables the stratified subsample

    // Pushes the global seed into the stage configs and range-checks every
    // field; call after any mutation.
    void finalize();
    void validate() const;
};

DType parse_precision(const std::string& s);
std::string precision_name(DType dt);

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

}  // namespace vitssp
