#include "soctwin/store.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "json_codec.hpp"
#include "soctwin/error.hpp"

namespace soctwin {

using codec::json;

// --- bytes ------------------------------------------------------------------

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading", path.string());
    std::vector<std::uint8_t> out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed", path.string());
    return out;
}

void atomic_write(const fs::path& path, std::span<const std::uint8_t> bytes) {
    static std::atomic<std::uint64_t> counter{0};
    std::error_code ec;
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory (" + ec.message() + ")", path.parent_path().string());
    }
    const auto tid = std::hash<std::thread::id>{}(std::this_thread::get_id());
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(tid) + "." + std::to_string(counter.fetch_add(1));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing", tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            fs::remove(tmp, ec);
            throw IoError("write failed", tmp.string());
        }
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("rename failed", path.string());
    }
}

void atomic_write(const fs::path& path, std::string_view text) {
    atomic_write(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw StateError("SHA-256 digest failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 15]);
    }
    return out;
}

std::string sha256_hex(std::string_view text) {
    return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

namespace {

class Sha256Stream {
public:
    Sha256Stream() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw StateError("SHA-256 init failed");
    }
    ~Sha256Stream() { EVP_MD_CTX_free(ctx_); }
    Sha256Stream(const Sha256Stream&) = delete;
    Sha256Stream& operator=(const Sha256Stream&) = delete;

    void update(const void* data, std::size_t n) {
        if (EVP_DigestUpdate(ctx_, data, n) != 1) throw StateError("SHA-256 update failed");
    }
    void update(std::string_view s) { update(s.data(), s.size()); }

    std::string hex() {
        unsigned char digest[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_, digest, &len) != 1) throw StateError("SHA-256 final failed");
        static constexpr char tab[] = "0123456789abcdef";
        std::string out;
        for (unsigned int i = 0; i < len; ++i) {
            out.push_back(tab[digest[i] >> 4]);
            out.push_back(tab[digest[i] & 15]);
        }
        return out;
    }

private:
    EVP_MD_CTX* ctx_;
};

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    out.insert(out.end(), raw, raw + sizeof(T));
}

template <class T>
T get_le(std::span<const std::uint8_t> in, std::size_t offset) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, in.data() + offset, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
}

// Re-raises a decode error with the file path prefixed.
FormatError with_path(const FormatError& e, const fs::path& path) {
    std::string msg = e.what();
    if (const auto at = msg.rfind(" (at byte "); at != std::string::npos) msg.resize(at);
    return FormatError(path.string() + ": " + msg, e.offset());
}

constexpr char kFieldMagic[5] = {'S', 'O', 'C', 'F', '1'};
constexpr std::uint64_t kMaxVoxels = std::uint64_t{1} << 28;

}  // namespace

// --- fields -----------------------------------------------------------------

std::vector<std::uint8_t> encode_field(const ScalarField& field, double day) {
    std::vector<std::uint8_t> out;
    out.reserve(kFieldHeaderSize + 4 * field.size());
    out.insert(out.end(), kFieldMagic, kFieldMagic + 5);
    out.insert(out.end(), 3, 0);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(field.width()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(field.height()));
    put_le<double>(out, field.spacing());
    put_le<double>(out, day);
    for (double v : field.values()) put_le<float>(out, static_cast<float>(v));
    return out;
}

FieldFile decode_field(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kFieldHeaderSize) throw FormatError("field file: truncated header", bytes.size());
    for (std::size_t i = 0; i < 5; ++i) {
        if (bytes[i] != static_cast<std::uint8_t>(kFieldMagic[i])) throw FormatError("field file: bad magic", i);
    }
    for (std::size_t i = 5; i < 8; ++i) {
        if (bytes[i] != 0) throw FormatError("field file: nonzero reserved byte", i);
    }
    const auto w = get_le<std::uint32_t>(bytes, 8);
    const auto h = get_le<std::uint32_t>(bytes, 12);
    if (w == 0 || h == 0) throw FormatError("field file: zero dimension", w == 0 ? 8 : 12);
    const std::uint64_t voxels = std::uint64_t{w} * std::uint64_t{h};
    if (w > static_cast<std::uint32_t>(std::numeric_limits<int>::max()) ||
        h > static_cast<std::uint32_t>(std::numeric_limits<int>::max()) || voxels > kMaxVoxels) {
        throw FormatError("field file: dimension overflow", 8);
    }
    const double spacing = get_le<double>(bytes, 16);
    if (!(spacing > 0.0) || !std::isfinite(spacing)) throw FormatError("field file: invalid spacing", 16);
    const double day = get_le<double>(bytes, 24);
    const std::uint64_t expected = kFieldHeaderSize + 4 * voxels;
    if (bytes.size() < expected) throw FormatError("field file: truncated payload", bytes.size());
    if (bytes.size() > expected) throw FormatError("field file: trailing bytes", expected);
    std::vector<double> values(voxels);
    for (std::uint64_t i = 0; i < voxels; ++i) values[i] = get_le<float>(bytes, kFieldHeaderSize + 4 * i);
    return {ScalarField(static_cast<int>(w), static_cast<int>(h), spacing, std::move(values)), day};
}

void write_field(const fs::path& path, const ScalarField& field, double day) {
    atomic_write(path, encode_field(field, day));
}

FieldFile read_field(const fs::path& path) {
    const auto bytes = read_bytes(path);
    try {
        return decode_field(bytes);
    } catch (const FormatError& e) {
        throw with_path(e, path);
    }
}

// --- PGM --------------------------------------------------------------------

namespace {

std::vector<std::uint8_t> pgm_header(int w, int h) {
    const std::string head = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    return {head.begin(), head.end()};
}

// Reads one header token, skipping whitespace and '#' comments.
std::uint64_t pgm_number(std::span<const std::uint8_t> b, std::size_t& pos, const char* what) {
    while (pos < b.size()) {
        if (b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
        } else if (std::isspace(b[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= b.size()) throw FormatError(std::string("pgm: truncated header before ") + what, pos);
    if (!std::isdigit(b[pos])) throw FormatError(std::string("pgm: expected ") + what, pos);
    std::uint64_t v = 0;
    const std::size_t start = pos;
    while (pos < b.size() && std::isdigit(b[pos])) {
        v = v * 10 + (b[pos] - '0');
        if (v > (std::uint64_t{1} << 31)) throw FormatError(std::string("pgm: ") + what + " overflow", start);
        ++pos;
    }
    return v;
}

}  // namespace

std::vector<std::uint8_t> encode_pgm(const BinaryMask& mask) {
    auto out = pgm_header(mask.width, mask.height);
    out.reserve(out.size() + mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) out.push_back(mask.at(i) ? 255 : 0);
    return out;
}

BinaryMask decode_pgm(std::span<const std::uint8_t> b) {
    if (b.size() < 2 || b[0] != 'P' || b[1] != '5') throw FormatError("pgm: bad magic (expected P5)", 0);
    std::size_t pos = 2;
    if (pos >= b.size() || !std::isspace(b[pos])) throw FormatError("pgm: bad magic (expected P5)", pos);
    const std::uint64_t w = pgm_number(b, pos, "width");
    const std::uint64_t h = pgm_number(b, pos, "height");
    const std::size_t maxval_at = pos;
    const std::uint64_t maxval = pgm_number(b, pos, "maxval");
    if (w == 0 || h == 0) throw FormatError("pgm: zero dimension", maxval_at);
    if (w * h > kMaxVoxels) throw FormatError("pgm: dimension overflow", maxval_at);
    if (maxval == 0 || maxval > 255) throw FormatError("pgm: only 8-bit maxval is supported", maxval_at);
    if (pos >= b.size() || !std::isspace(b[pos])) throw FormatError("pgm: missing separator after maxval", pos);
    ++pos;
    const std::size_t n = static_cast<std::size_t>(w * h);
    if (b.size() < pos + n) throw FormatError("pgm: truncated payload", b.size());
    if (b.size() > pos + n) throw FormatError("pgm: trailing bytes", pos + n);
    BinaryMask m(static_cast<int>(w), static_cast<int>(h));
    for (std::size_t i = 0; i < n; ++i) m.bits[i] = b[pos + i] != 0 ? 1 : 0;
    return m;
}

void write_mask(const fs::path& path, const BinaryMask& mask) { atomic_write(path, encode_pgm(mask)); }

BinaryMask read_mask(const fs::path& path) {
    const auto bytes = read_bytes(path);
    try {
        return decode_pgm(bytes);
    } catch (const FormatError& e) {
        throw with_path(e, path);
    }
}

std::vector<std::uint8_t> encode_image_pgm(const ScalarField& image, double lo, double hi) {
    if (!(hi > lo)) throw ValidationError("image range must satisfy hi > lo", "range");
    auto out = pgm_header(image.width(), image.height());
    out.reserve(out.size() + image.size());
    for (double v : image.values()) {
        const double s = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
        out.push_back(static_cast<std::uint8_t>(std::lround(s * 255.0)));
    }
    return out;
}

// --- patients ---------------------------------------------------------------

namespace {

constexpr const char* kDomainFile = "anatomy/domain.pgm";
constexpr const char* kTissueDFile = "anatomy/tissue_diffusion.socf";
constexpr const char* kTissueKFile = "anatomy/tissue_proliferation.socf";

std::string default_mask_path(std::size_t j) { return "masks/obs_" + std::to_string(j) + ".pgm"; }

std::vector<std::string> resection_paths(const TreatmentTimeline& tl) {
    std::vector<std::string> refs;
    for (std::size_t i = 0; i < tl.surgeries.size(); ++i) {
        refs.push_back(tl.surgeries[i].resection ? "timeline/resection_" + std::to_string(i) + ".socf" : "");
    }
    return refs;
}

json patient_json(const PatientRecord& p) {
    const auto refs = resection_paths(p.timeline);
    json obs = json::array();
    for (std::size_t j = 0; j < p.observations.size(); ++j) {
        const auto& o = p.observations[j];
        obs.push_back({{"day", o.day},
                       {"mask", o.mask_path.empty() ? default_mask_path(j) : o.mask_path},
                       {"image", o.image_path.empty() ? json(nullptr) : json(o.image_path)},
                       {"area_mm2", o.area_mm2},
                       {"recist_mm", o.recist_mm}});
    }
    json anatomy = {{"width", p.anatomy.width()},
                    {"height", p.anatomy.height()},
                    {"spacing", p.anatomy.spacing},
                    {"domain", kDomainFile}};
    anatomy["tissue"] = p.anatomy.tissue ? json{{"diffusion", kTissueDFile}, {"proliferation", kTissueKFile}}
                                         : json(nullptr);
    json j = {{"schema", std::string(kPatientSchema)},
              {"id", p.id},
              {"covariates", codec::to_json(p.covariates)},
              {"timeline", codec::to_json(p.timeline, &refs)},
              {"anatomy", anatomy},
              {"observations", obs}};
    if (p.truth) {
        json curve = json::array();
        for (const auto& [d, v] : p.truth->volume_curve) curve.push_back({d, v});
        j["truth"] = {{"params", codec::to_json(p.truth->params)}, {"volume_curve", curve}};
    }
    return j;
}

// Rejects absolute paths and parent traversal in record-relative paths.
fs::path resolve_relative(const fs::path& dir, const std::string& rel) {
    const fs::path r(rel);
    if (rel.empty() || r.is_absolute()) throw FormatError("patient: path must be relative: '" + rel + "'", 0);
    for (const auto& part : r) {
        if (part == "..") throw FormatError("patient: path escapes the patient directory: '" + rel + "'", 0);
    }
    return dir / r;
}

}  // namespace

std::string patient_to_json(const PatientRecord& patient) { return patient_json(patient).dump(2) + "\n"; }

void write_patient(const fs::path& dir, const PatientRecord& patient) {
    patient.validate();
    write_mask(dir / kDomainFile, patient.anatomy.domain.mask());
    if (patient.anatomy.tissue) {
        write_field(dir / kTissueDFile, patient.anatomy.tissue->diffusion, 0.0);
        write_field(dir / kTissueKFile, patient.anatomy.tissue->proliferation, 0.0);
    }
    const auto refs = resection_paths(patient.timeline);
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (!refs[i].empty()) {
            write_field(dir / refs[i], *patient.timeline.surgeries[i].resection, patient.timeline.surgeries[i].day);
        }
    }
    for (std::size_t j = 0; j < patient.observations.size(); ++j) {
        const auto& o = patient.observations[j];
        write_mask(resolve_relative(dir, o.mask_path.empty() ? default_mask_path(j) : o.mask_path), o.mask);
    }
    atomic_write(dir / "patient.json", patient_to_json(patient));
}

PatientRecord read_patient(const fs::path& dir) {
    const auto bytes = read_bytes(dir / "patient.json");
    const json j = codec::parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    if (!j.is_object() || !j.contains("schema")) throw FormatError("patient: missing 'schema'", 0);
    const std::string schema = codec::get_string(j, "schema");
    if (schema != kPatientSchema) throw FormatError("patient: unknown schema '" + schema + "'", 0);

    PatientRecord p;
    p.id = codec::get_string(j, "id");
    p.covariates = codec::covariates_from_json(codec::require(j, "covariates"));
    std::vector<std::string> refs;
    p.timeline = codec::timeline_from_json(codec::require(j, "timeline"), &refs);
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (!refs[i].empty()) p.timeline.surgeries[i].resection = read_field(resolve_relative(dir, refs[i])).field;
    }

    const json& an = codec::require(j, "anatomy");
    p.anatomy.spacing = codec::get_number(an, "spacing");
    const BinaryMask dom = read_mask(resolve_relative(dir, codec::get_string(an, "domain")));
    if (dom.width != codec::get_int(an, "width") || dom.height != codec::get_int(an, "height")) {
        throw FormatError("patient: domain mask size disagrees with anatomy width/height", 0);
    }
    p.anatomy.domain = DomainMask(dom);
    if (const json& t = codec::require(an, "tissue"); !t.is_null()) {
        TissueMap tm;
        tm.diffusion = read_field(resolve_relative(dir, codec::get_string(t, "diffusion"))).field;
        tm.proliferation = read_field(resolve_relative(dir, codec::get_string(t, "proliferation"))).field;
        p.anatomy.tissue = std::move(tm);
    }

    const json& obs = codec::require(j, "observations");
    if (!obs.is_array()) throw FormatError("patient: 'observations' must be an array", 0);
    for (const auto& e : obs) {
        Observation o;
        o.day = codec::get_number(e, "day");
        o.mask_path = codec::get_string(e, "mask");
        o.mask = read_mask(resolve_relative(dir, o.mask_path));
        if (const auto it = e.find("image"); it != e.end() && it->is_string()) o.image_path = it->get<std::string>();
        o.area_mm2 = codec::get_number(e, "area_mm2");
        o.recist_mm = codec::get_number(e, "recist_mm");
        p.observations.push_back(std::move(o));
    }

    if (const auto it = j.find("truth"); it != j.end() && !it->is_null()) {
        GroundTruth gt;
        gt.params = codec::bio_params_from_json(codec::require(*it, "params"));
        for (const auto& e : codec::require(*it, "volume_curve")) {
            if (!e.is_array() || e.size() != 2) throw FormatError("patient: volume_curve entries are [day, volume]", 0);
            gt.volume_curve.emplace_back(e[0].get<double>(), e[1].get<double>());
        }
        p.truth = std::move(gt);
    }
    p.validate();
    return p;
}

// --- checkpoints ------------------------------------------------------------

std::string checkpoint_to_json(const Checkpoint& c) {
    const json j = {{"schema", std::string(kCheckpointSchema)},
                    {"params", codec::to_json(c.params)},
                    {"weights", codec::to_json(c.weights)},
                    {"optim", codec::to_json(c.optim)},
                    {"loss", codec::to_json(c.loss)},
                    {"loss_history", c.loss_history}};
    return j.dump(2) + "\n";
}

Checkpoint checkpoint_from_json(std::string_view text) {
    const json j = codec::parse(text);
    if (!j.is_object() || !j.contains("schema")) throw FormatError("checkpoint: missing 'schema'", 0);
    const std::string schema = codec::get_string(j, "schema");
    if (schema != kCheckpointSchema) throw FormatError("checkpoint: unsupported schema '" + schema + "'", 0);
    Checkpoint c;
    c.params = codec::bio_params_from_json(codec::require(j, "params"));
    c.weights = codec::weights_from_json(codec::require(j, "weights"));
    c.optim = codec::optim_from_json(codec::require(j, "optim"));
    c.loss = codec::loss_config_from_json(codec::require(j, "loss"));
    for (const auto& v : codec::require(j, "loss_history")) {
        if (!v.is_number()) throw FormatError("checkpoint: loss_history must hold numbers", 0);
        c.loss_history.push_back(v.get<double>());
    }
    return c;
}

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) { atomic_write(path, checkpoint_to_json(ckpt)); }

Checkpoint read_checkpoint(const fs::path& path) {
    const auto bytes = read_bytes(path);
    return checkpoint_from_json(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

// --- manifests --------------------------------------------------------------

namespace {

std::string canonical_spec(const std::string& spec_json) { return codec::parse(spec_json).dump(); }

}  // namespace

std::string compute_cohort_hash(const fs::path& root, const CohortManifest& manifest) {
    Sha256Stream sha;
    sha.update(kManifestSchema);
    sha.update("\n");
    sha.update(canonical_spec(manifest.spec_json));
    sha.update("\n");
    for (const auto& e : manifest.patients) {
        sha.update("patient " + e.id + " " + e.path + "\n");
        const fs::path dir = root / e.path;
        if (!fs::is_directory(dir)) throw IoError("manifest references a missing patient directory", dir.string());
        std::vector<std::string> files;
        for (const auto& f : fs::recursive_directory_iterator(dir)) {
            if (f.is_regular_file()) files.push_back(fs::relative(f.path(), dir).generic_string());
        }
        std::sort(files.begin(), files.end());
        for (const auto& rel : files) {
            const auto bytes = read_bytes(dir / rel);
            sha.update("file " + rel + " " + std::to_string(bytes.size()) + "\n");
            sha.update(bytes.data(), bytes.size());
        }
    }
    return sha.hex();
}

std::string write_manifest(const fs::path& root, CohortManifest manifest) {
    manifest.hash = compute_cohort_hash(root, manifest);
    json patients = json::array();
    for (const auto& e : manifest.patients) {
        patients.push_back({{"id", e.id}, {"path", e.path}, {"scan_days", e.scan_days}});
    }
    const json j = {{"schema", std::string(kManifestSchema)},
                    {"spec", codec::parse(manifest.spec_json)},
                    {"patients", patients},
                    {"hash", manifest.hash}};
    atomic_write(root / "manifest.json", j.dump(2) + "\n");
    return manifest.hash;
}

CohortManifest read_manifest(const fs::path& root) {
    const auto bytes = read_bytes(root / "manifest.json");
    const json j = codec::parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    if (!j.is_object() || !j.contains("schema")) throw FormatError("manifest: missing 'schema'", 0);
    const std::string schema = codec::get_string(j, "schema");
    if (schema != kManifestSchema) throw FormatError("manifest: unknown schema '" + schema + "'", 0);
    CohortManifest m;
    m.spec_json = codec::require(j, "spec").dump();
    m.hash = codec::get_string(j, "hash");
    for (const auto& e : codec::require(j, "patients")) {
        ManifestEntry me;
        me.id = codec::get_string(e, "id");
        me.path = codec::get_string(e, "path");
        for (const auto& d : codec::require(e, "scan_days")) me.scan_days.push_back(d.get<double>());
        m.patients.push_back(std::move(me));
    }
    return m;
}

Cohort load_cohort(const fs::path& root, bool verify_hash) {
    Cohort c;
    c.manifest = read_manifest(root);
    if (verify_hash) {
        const std::string h = compute_cohort_hash(root, c.manifest);
        if (h != c.manifest.hash) throw FormatError("manifest hash mismatch (recomputed " + h + ")", 0);
    }
    for (const auto& e : c.manifest.patients) {
        PatientRecord p = read_patient(root / e.path);
        if (p.id != e.id) throw FormatError("manifest id '" + e.id + "' disagrees with patient '" + p.id + "'", 0);
        c.patients.push_back(std::move(p));
    }
    return c;
}

std::string config_json(const RolloutConfig& cfg) { return codec::to_json(cfg).dump(); }
std::string config_json(const OptimConfig& cfg) { return codec::to_json(cfg).dump(); }
std::string config_json(const LossConfig& cfg) { return codec::to_json(cfg).dump(); }

}  // namespace soctwin
