#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "soctwin/calibrate.hpp"
#include "soctwin/grid.hpp"
#include "soctwin/patient.hpp"

namespace soctwin {

namespace fs = std::filesystem;

inline constexpr std::string_view kPatientSchema = "soctwin.patient/1";
inline constexpr std::string_view kCheckpointSchema = "soctwin.checkpoint/1";
inline constexpr std::string_view kManifestSchema = "soctwin.cohort/1";

/// Byte-level helpers. atomic_write goes through a sibling temp file and a
/// rename, so readers never observe a partial file.
std::vector<std::uint8_t> read_bytes(const fs::path& path);
void atomic_write(const fs::path& path, std::span<const std::uint8_t> bytes);
void atomic_write(const fs::path& path, std::string_view text);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

// --- field files: "SOCF1" header + little-endian float32 payload -----------

struct FieldFile {
    ScalarField field;
    double day = 0.0;
};

inline constexpr std::size_t kFieldHeaderSize = 32;

std::vector<std::uint8_t> encode_field(const ScalarField& field, double day);
/// Throws FormatError (with byte offset) on bad magic, truncation, trailing
/// bytes or dimension overflow.
FieldFile decode_field(std::span<const std::uint8_t> bytes);
void write_field(const fs::path& path, const ScalarField& field, double day);
FieldFile read_field(const fs::path& path);

// --- masks: binary PGM (P5, maxval 255, 0/255) ------------------------------

std::vector<std::uint8_t> encode_pgm(const BinaryMask& mask);
/// Any nonzero sample reads as set.
BinaryMask decode_pgm(std::span<const std::uint8_t> bytes);
void write_mask(const fs::path& path, const BinaryMask& mask);
BinaryMask read_mask(const fs::path& path);

/// 8-bit greyscale PGM of an image scaled from [lo, hi].
std::vector<std::uint8_t> encode_image_pgm(const ScalarField& image, double lo, double hi);

// --- patients ---------------------------------------------------------------

/// JSON document of the record (covariates, timeline, observation table with
/// relative paths, anatomy references, optional ground truth). Sorted keys,
/// shortest round-trip decimals.
std::string patient_to_json(const PatientRecord& patient);

/// Writes <dir>/patient.json plus the referenced mask, anatomy and resection
/// files. Observations without a mask_path get "masks/obs_<j>.pgm".
void write_patient(const fs::path& dir, const PatientRecord& patient);

/// Reads <dir>/patient.json and every file it references. Throws FormatError
/// on a missing or unknown schema, missing keys or malformed values.
PatientRecord read_patient(const fs::path& dir);

// --- checkpoints ------------------------------------------------------------

struct Checkpoint {
    BioParams params;
    ModulatorWeights weights = ModulatorWeights::zeros();
    OptimConfig optim;
    LossConfig loss;
    std::vector<double> loss_history;
};

std::string checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(std::string_view text);
void write_checkpoint(const fs::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const fs::path& path);

/// Compact JSON echoes of resolved configurations (sorted keys).
std::string config_json(const RolloutConfig& cfg);
std::string config_json(const OptimConfig& cfg);
std::string config_json(const LossConfig& cfg);

// --- cohort manifests -------------------------------------------------------

struct ManifestEntry {
    std::string id;
    std::string path;  // patient directory relative to the cohort root
    std::vector<double> scan_days;
};

struct CohortManifest {
    std::string spec_json = "{}";  // echo of the generating spec
    std::vector<ManifestEntry> patients;
    std::string hash;  // SHA-256 hex over the canonical byte stream
};

/// SHA-256 over the spec echo and, per patient in manifest order, every file
/// in the patient directory (sorted relative path, length, bytes).
std::string compute_cohort_hash(const fs::path& root, const CohortManifest& manifest);

/// Computes the hash and writes <root>/manifest.json; returns the hash.
std::string write_manifest(const fs::path& root, CohortManifest manifest);
CohortManifest read_manifest(const fs::path& root);

struct Cohort {
    CohortManifest manifest;
    std::vector<PatientRecord> patients;
};

/// Manifest plus every patient; verify_hash recomputes and compares.
Cohort load_cohort(const fs::path& root, bool verify_hash = false);

}  // namespace soctwin
