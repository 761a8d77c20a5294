#include "cyclelapse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace cyclelapse {

namespace pt = boost::property_tree;

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

namespace {

constexpr const char* kMagic = "CYCLELAPSE-ARCHIVE 1";

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::string line() {
        std::string out;
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') out.push_back(char(bytes_[pos_++]));
        if (pos_ >= bytes_.size()) throw CheckpointError("truncated archive");
        ++pos_;
        return out;
    }

    std::span<const std::uint8_t> take(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw CheckpointError("truncated archive payload");
        auto out = bytes_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

void append(std::vector<std::uint8_t>& out, const std::string& s) { out.insert(out.end(), s.begin(), s.end()); }

}  // namespace

// --- Archive -------------------------------------------------------------------

void Archive::put_text(const std::string& name, std::string text) {
    if (name.empty() || name.find_first_of(" \n") != std::string::npos)
        throw CheckpointError("invalid entry name '" + name + "'");
    Entry e;
    e.name = name;
    e.text = std::move(text);
    if (auto it = index_.find(name); it != index_.end()) {
        entries_[it->second] = std::move(e);
    } else {
        index_[name] = entries_.size();
        entries_.push_back(std::move(e));
    }
}

void Archive::put_tensor(const std::string& name, const torch::Tensor& tensor) {
    if (name.empty() || name.find_first_of(" \n") != std::string::npos)
        throw CheckpointError("invalid entry name '" + name + "'");
    const auto t = tensor.detach().to(torch::kCPU, torch::kFloat).contiguous();
    Entry e;
    e.name = name;
    e.is_tensor = true;
    e.shape.assign(t.sizes().begin(), t.sizes().end());
    e.values.assign(t.data_ptr<float>(), t.data_ptr<float>() + t.numel());
    if (auto it = index_.find(name); it != index_.end()) {
        entries_[it->second] = std::move(e);
    } else {
        index_[name] = entries_.size();
        entries_.push_back(std::move(e));
    }
}

const Archive::Entry& Archive::find(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw CheckpointError("archive has no entry '" + name + "'");
    return entries_[it->second];
}

const std::string& Archive::text(const std::string& name) const {
    const auto& e = find(name);
    if (e.is_tensor) throw CheckpointError("entry '" + name + "' is not text");
    return e.text;
}

torch::Tensor Archive::tensor(const std::string& name) const {
    const auto& e = find(name);
    if (!e.is_tensor) throw CheckpointError("entry '" + name + "' is not a tensor");
    auto t = torch::empty(e.shape, torch::kFloat);
    if (!e.values.empty()) std::memcpy(t.data_ptr<float>(), e.values.data(), e.values.size() * sizeof(float));
    return t;
}

std::vector<std::string> Archive::names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
}

std::vector<std::uint8_t> Archive::serialize() const {
    std::vector<std::uint8_t> out;
    append(out, std::string(kMagic) + "\n" + std::to_string(entries_.size()) + "\n");
    for (const auto& e : entries_) {
        if (e.is_tensor) {
            std::string header = "f32 " + std::to_string(e.shape.size());
            for (auto d : e.shape) header += " " + std::to_string(d);
            header += "\n";
            const std::size_t payload = header.size() + e.values.size() * sizeof(float);
            append(out, "tensor " + e.name + " " + std::to_string(payload) + "\n");
            append(out, header);
            const auto* p = reinterpret_cast<const std::uint8_t*>(e.values.data());
            out.insert(out.end(), p, p + e.values.size() * sizeof(float));
        } else {
            append(out, "text " + e.name + " " + std::to_string(e.text.size()) + "\n");
            append(out, e.text);
        }
    }
    return out;
}

Archive Archive::deserialize(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    if (r.line() != kMagic) throw CheckpointError("not a cyclelapse archive");
    std::size_t count = 0;
    try {
        count = std::stoull(r.line());
    } catch (const std::exception&) {
        throw CheckpointError("bad archive entry count");
    }
    Archive a;
    for (std::size_t i = 0; i < count; ++i) {
        std::istringstream head(r.line());
        std::string kind, name;
        std::size_t size = 0;
        if (!(head >> kind >> name >> size)) throw CheckpointError("bad archive entry header");
        const auto payload = r.take(size);
        if (kind == "text") {
            a.put_text(name, std::string(payload.begin(), payload.end()));
        } else if (kind == "tensor") {
            Reader pr(payload);
            std::istringstream shape_line(pr.line());
            std::string dtype;
            std::size_t ndim = 0;
            if (!(shape_line >> dtype >> ndim) || dtype != "f32") throw CheckpointError("unsupported tensor blob in '" + name + "'");
            std::vector<std::int64_t> shape(ndim);
            std::int64_t numel = 1;
            for (auto& d : shape) {
                if (!(shape_line >> d) || d < 0) throw CheckpointError("bad tensor shape in '" + name + "'");
                numel *= d;
            }
            const auto data = pr.take(std::size_t(numel) * sizeof(float));
            if (!pr.done()) throw CheckpointError("tensor blob size mismatch in '" + name + "'");
            Entry e;
            e.name = name;
            e.is_tensor = true;
            e.shape = shape;
            e.values.resize(std::size_t(numel));
            if (numel > 0) std::memcpy(e.values.data(), data.data(), data.size());
            a.index_[name] = a.entries_.size();
            a.entries_.push_back(std::move(e));
        } else {
            throw CheckpointError("unknown archive entry kind '" + kind + "'");
        }
    }
    if (!r.done()) throw CheckpointError("trailing bytes after archive entries");
    return a;
}

void Archive::save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
        out.flush();
        if (!out) throw CheckpointError("write failed for " + tmp.string() + " (disk full?)");
    }
    std::filesystem::rename(tmp, path);
}

Archive Archive::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

// --- Header --------------------------------------------------------------------

std::string CheckpointHeader::to_text() const {
    std::ostringstream out;
    out << "[checkpoint]\n"
        << "format = " << kCheckpointFormat << "\n"
        << "images_shown = " << images_shown << "\n"
        << "step = " << step << "\n\n";
    out << experiment.to_text() << "\n";
    out << "[resolved_cycles]\n"
        << "day_frequency = " << format_exact(cycles.day_frequency) << "\n"
        << "year_frequency = " << format_exact(cycles.year_frequency) << "\n"
        << "trend_scale = " << format_exact(cycles.trend_scale) << "\n"
        << "day_enabled = " << (cycles.day_enabled ? 1 : 0) << "\n"
        << "year_enabled = " << (cycles.year_enabled ? 1 : 0) << "\n\n";
    out << "[resolved_jitter]\n"
        << "sigma_year = " << format_exact(jitter.sigma_year) << "\n"
        << "sigma_trend = " << format_exact(jitter.sigma_trend) << "\n"
        << "clamp = " << (jitter.clamp ? 1 : 0) << "\n\n";
    out << "[dataset]\n"
        << "first = " << format_iso8601(dataset.first) << "\n"
        << "last = " << format_iso8601(dataset.last) << "\n"
        << "length_days = " << format_exact(dataset.length_days) << "\n"
        << "frame_count = " << dataset.frame_count << "\n";
    return out.str();
}

CheckpointHeader CheckpointHeader::parse(const std::string& text) {
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw CheckpointError(std::string("bad checkpoint config: ") + e.what());
    }
    try {
        if (tree.get<std::string>("checkpoint.format") != kCheckpointFormat)
            throw CheckpointError("unsupported checkpoint format '" + tree.get<std::string>("checkpoint.format") + "'");
        CheckpointHeader h;
        h.images_shown = tree.get<std::int64_t>("checkpoint.images_shown");
        h.step = tree.get<std::int64_t>("checkpoint.step");

        pt::ptree experiment;
        for (const char* section : {"model", "train", "jitter", "cycles"})
            experiment.put_child(section, tree.get_child(section));
        std::ostringstream exp_text;
        pt::ini_parser::write_ini(exp_text, experiment);
        h.experiment = ExperimentConfig::parse(exp_text.str());

        h.cycles.day_frequency = tree.get<double>("resolved_cycles.day_frequency");
        h.cycles.year_frequency = tree.get<double>("resolved_cycles.year_frequency");
        h.cycles.trend_scale = tree.get<double>("resolved_cycles.trend_scale");
        h.cycles.day_enabled = tree.get<int>("resolved_cycles.day_enabled") != 0;
        h.cycles.year_enabled = tree.get<int>("resolved_cycles.year_enabled") != 0;
        h.jitter.sigma_year = tree.get<double>("resolved_jitter.sigma_year");
        h.jitter.sigma_trend = tree.get<double>("resolved_jitter.sigma_trend");
        h.jitter.clamp = tree.get<int>("resolved_jitter.clamp") != 0;
        h.dataset.first = parse_iso8601(tree.get<std::string>("dataset.first"));
        h.dataset.last = parse_iso8601(tree.get<std::string>("dataset.last"));
        h.dataset.length_days = tree.get<double>("dataset.length_days");
        h.dataset.frame_count = tree.get<std::size_t>("dataset.frame_count");
        return h;
    } catch (const pt::ptree_error& e) {
        throw CheckpointError(std::string("incomplete checkpoint config: ") + e.what());
    }
}

// --- Module parameters ---------------------------------------------------------

void store_parameters(Archive& archive, const std::string& prefix, const torch::nn::Module& module) {
    for (const auto& item : module.named_parameters()) archive.put_tensor(prefix + item.key(), item.value());
}

void restore_parameters(const Archive& archive, const std::string& prefix, torch::nn::Module& module) {
    torch::NoGradGuard guard;
    for (auto& item : module.named_parameters()) {
        const auto name = prefix + item.key();
        if (!archive.has(name)) throw CheckpointError("checkpoint is missing parameter " + name);
        const auto stored = archive.tensor(name);
        if (stored.sizes() != item.value().sizes())
            throw CheckpointError("shape mismatch for parameter " + name);
        item.value().copy_(stored);
    }
}

std::string content_hash(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

InferenceModel load_inference_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const Archive archive = Archive::deserialize(bytes);
    InferenceModel model;
    model.header = CheckpointHeader::parse(archive.text("config"));
    model.generator = Generator(model.header.experiment.generator_config(model.header.cycles));
    restore_parameters(archive, "G/", *model.generator);
    model.generator->eval();
    model.checkpoint_id = content_hash(bytes);
    return model;
}

}  // namespace cyclelapse
