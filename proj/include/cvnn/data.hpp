#pragma once

#include "cvnn/model.hpp"
#include "cvnn/optim.hpp"
#include "cvnn/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace cvnn {

enum class IoErrc {
    Open,          // cannot open or create the file
    BadMagic,
    Truncated,
    Version,
    Malformed,     // structurally invalid content (bad manifest line, impossible sizes)
    SpecMismatch,  // checkpoint written for a different model
    Write,
};

const char* to_string(IoErrc code);

class IoError : public Error {
public:
    IoError(IoErrc code, const std::string& what) : Error(what), code_(code) {}
    IoErrc code() const { return code_; }

private:
    IoErrc code_;
};

/// One complex image chip [1,H,W].
struct SliceRecord {
    ComplexTensor<float> image;
    int label = 0;
    std::string id;
};

// CVSL, little-endian: "CVSL", u16 version, u16 label, u32 H, u32 W,
// then H·W (re, im) float32 pairs in row-major order.
inline constexpr std::uint16_t kCvslVersion = 1;
inline constexpr std::size_t kCvslHeaderBytes = 16;

void write_cvsl(const std::filesystem::path& path, const SliceRecord& record);
SliceRecord read_cvsl(const std::filesystem::path& path);

/// Divide by the maximum modulus, then center-crop or zero-pad both axes to
/// `target`. Odd padding puts the extra row/column at the bottom/right, and
/// odd cropping drops it from the same side.
SliceRecord preprocess(const SliceRecord& record, std::size_t target);

struct DatasetManifest {
    std::vector<std::string> class_names;
    std::vector<std::pair<std::string, int>> records;  // path relative to the manifest, label
};

/// `dir`/classes.txt plus `dir`/<split>.tsv.
DatasetManifest read_manifest(const std::filesystem::path& dir, const std::string& split);
void write_manifest(const std::filesystem::path& dir, const std::string& split, const DatasetManifest& manifest);

/// In-memory labelled images, all of the same size.
struct Dataset {
    std::vector<std::string> class_names;
    std::vector<SliceRecord> records;

    std::size_t size() const { return records.size(); }
    std::size_t num_classes() const { return class_names.size(); }
    std::size_t image_size() const { return records.empty() ? 0 : records.front().image.dim(2); }
    /// Stacks the selected records into an [n,1,H,W] batch.
    template <typename T>
    ComplexTensor<T> batch(std::span<const std::size_t> indices, std::vector<int>* labels = nullptr) const;
    std::vector<std::size_t> class_counts() const;
};

/// Reads every record of a split and preprocesses it to `target` (0 keeps
/// the stored size, which must then be uniform).
Dataset load_dataset(const std::filesystem::path& dir, const std::string& split, std::size_t target = 0);

struct PhaseDatasetConfig {
    std::size_t num_classes = 3;
    std::size_t samples_per_class = 200;
    std::size_t size = 32;
    bool amplitude_discriminable = false;
    double noise_sigma = 0.3;
    std::uint64_t seed = 0;
};

struct PhaseDataset {
    Dataset train;
    Dataset test;
    std::vector<std::pair<int, int>> frequencies;  // (k, l) per class
};

/// Class-specific integer phase-ramp directions: primitive pairs, no two
/// parallel, ordered by length then lexicographically.
std::vector<std::pair<int, int>> phase_frequencies(std::size_t num_classes, std::size_t size);

/// z[u,v] = m[u,v]·exp(j(2π(k·u + l·v)/size + φ[u,v])) with Rayleigh speckle m
/// and φ ~ N(0, σ²). Samples are max-modulus normalized. With
/// amplitude_discriminable, class c has a horizontal band of doubled speckle
/// scale instead of a class-independent scale.
PhaseDataset generate_phase_dataset(const PhaseDatasetConfig& config);

/// Generates and writes `dir`/{train,test}/*.cvsl, train.tsv, test.tsv and
/// classes.txt.
PhaseDataset write_phase_dataset(const PhaseDatasetConfig& config, const std::filesystem::path& dir);

// Checkpoint container "CVCK": spec text, Adam step, then each parameter's
// value and both Adam moments as float32 planes, then BN running buffers.
inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, Model<float>& model, const AdamState<float>& optimizer);

/// Loads into an existing model; throws IoErrc::SpecMismatch if its spec differs.
void load_checkpoint(const std::filesystem::path& path, Model<float>& model, AdamState<float>& optimizer);

struct LoadedCheckpoint {
    std::unique_ptr<Model<float>> model;
    AdamState<float> optimizer;
};

/// Rebuilds the model from the stored spec.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cvnn
