#pragma once

#include <agnet/config.hpp>
#include <agnet/model.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace agnet::inline AGNET_ABI {

// AGCK layout: "AGCK"; u32 tensor count; per tensor: u32 name length, UTF-8
// name, u32 ndim, ndim x u32 extents, float32 LE payload; then u32 length and
// the UTF-8 echo of the run configuration. Training state travels in the echo
// as `state.<key> = <value>` lines.

struct CheckpointData {
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::string echo;

    const Tensor *find(const std::string &name) const;
    /// The echo's configuration keys (state.* lines excluded).
    RunConfig config() const;
    /// The echo's state.* entries with the prefix stripped.
    std::map<std::string, std::string> state() const;
};

/// Writes to a temporary sibling and renames it into place.
void write_checkpoint(const std::filesystem::path &path, const CheckpointData &data);
/// Reads and validates the whole file; any defect raises DataError.
CheckpointData read_checkpoint(const std::filesystem::path &path);

/// Model state plus `extra` tensors (e.g. optimizer velocities) and the echo.
CheckpointData make_checkpoint(const Model &model, const RunConfig &config, const std::vector<NamedTensor> &extra = {},
                               const std::map<std::string, std::string> &state = {});
void save_checkpoint(const Model &model, const std::filesystem::path &path, const RunConfig &config);

/// Copies every model tensor from `data`. All names and shapes are checked
/// before anything is written, so a failure leaves the model untouched.
void assign_state(Model &model, const CheckpointData &data);
/// Builds the model described by the echo and loads its state.
Model load_model(const CheckpointData &data);
Model load_checkpoint(const std::filesystem::path &path);

} // namespace agnet::inline AGNET_ABI
