#include "msdiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "msdiff/error.hpp"

namespace msd {

using nlohmann::json;

namespace {

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

const char* group_name(ParamGroup g) { return g == ParamGroup::base ? "base" : "adapter"; }

}  // namespace

void save_params(const std::string& path, const ParamStore& params, const std::string& meta_json) {
    json header;
    try {
        header = json::parse(meta_json);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("checkpoint metadata: ") + e.what());
    }
    if (!header.is_object()) throw ContractError("checkpoint metadata must be a JSON object");
    header["format_version"] = checkpoint_format_version;
    json tensors = json::object();
    std::string blob;
    for (const auto& [name, t] : params.all()) {
        tensors[name] = {{"shape", t.shape()}, {"byte_offset", blob.size()}, {"group", group_name(params.group(name))}};
        for (double v : t.data()) put_u64(blob, std::bit_cast<std::uint64_t>(v));
    }
    header["tensors"] = tensors;
    header["optimizer_step"] = params.step();
    const std::string text = header.dump();
    std::string out;
    put_u64(out, text.size());
    out += text;
    out += blob;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for '" + path + "'");
}

ParamFile load_params(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 8) throw IoError("'" + path + "': truncated header");
    const std::uint64_t header_len = get_u64(bytes.data());
    if (header_len > bytes.size() - 8) throw IoError("'" + path + "': truncated header");
    json header;
    try {
        header = json::parse(bytes.substr(8, header_len));
    } catch (const json::parse_error& e) {
        throw ParseError("'" + path + "': " + e.what());
    }
    if (!header.is_object() || !header.contains("format_version") || !header["format_version"].is_number_integer()) {
        throw ParseError("'" + path + "': header has no format_version");
    }
    const int version = header["format_version"].get<int>();
    if (version != checkpoint_format_version) {
        throw VersionError("'" + path + "': checkpoint format_version " + std::to_string(version) +
                           " does not match supported version " + std::to_string(checkpoint_format_version));
    }
    if (!header.contains("tensors") || !header["tensors"].is_object()) {
        throw ParseError("'" + path + "': header has no tensors table");
    }
    const char* blob = bytes.data() + 8 + header_len;
    const std::size_t blob_size = bytes.size() - 8 - header_len;

    ParamFile out;
    std::size_t expected = 0;
    for (const auto& [name, rec] : header["tensors"].items()) {
        TensorRecord r;
        r.name = name;
        try {
            r.shape = rec.at("shape").get<Shape>();
            r.byte_offset = rec.at("byte_offset").get<std::size_t>();
            r.group = rec.at("group").get<std::string>() == "adapter" ? ParamGroup::adapter : ParamGroup::base;
        } catch (const json::exception& e) {
            throw ParseError("'" + path + "': tensor '" + name + "': " + e.what());
        }
        const std::size_t n = shape_numel(r.shape);
        if (r.byte_offset != expected) throw ParseError("'" + path + "': tensor '" + name + "' has a bad byte_offset");
        if (r.byte_offset + 8 * n > blob_size) throw IoError("'" + path + "': truncated tensor data for '" + name + "'");
        std::vector<double> values(n);
        for (std::size_t i = 0; i < n; ++i) values[i] = std::bit_cast<double>(get_u64(blob + r.byte_offset + 8 * i));
        out.params.add(name, Tensor::from(r.shape, std::move(values)), r.group);
        expected = r.byte_offset + 8 * n;
        out.tensors.push_back(std::move(r));
    }
    if (expected != blob_size) throw ParseError("'" + path + "': trailing bytes after tensor data");
    if (header.contains("optimizer_step")) out.params.set_step(header["optimizer_step"].get<std::uint64_t>());
    header.erase("tensors");
    header.erase("format_version");
    header.erase("optimizer_step");
    out.meta_json = header.dump();
    return out;
}

void save_checkpoint(const std::string& path, const Model& model, const RunConfig& config, std::uint64_t step,
                     const std::string& rng_state) {
    json meta = {{"config", json::parse(run_config_to_json(config))},
                 {"vocab", model.vocab.tokens()},
                 {"step", step},
                 {"rng_state", rng_state}};
    save_params(path, model.params, meta.dump());
}

Checkpoint load_checkpoint(const std::string& path) {
    ParamFile file = load_params(path);
    const json meta = json::parse(file.meta_json);
    if (!meta.contains("config") || !meta.contains("vocab") || !meta.contains("step") || !meta.contains("rng_state")) {
        throw ParseError("'" + path + "': checkpoint header lacks config, vocab, step or rng_state");
    }
    Checkpoint ck;
    ck.config = parse_run_config(meta["config"].dump());
    ck.step = meta["step"].get<std::uint64_t>();
    ck.rng_state = meta["rng_state"].get<std::string>();
    ck.model = Model::create(effective_model_config(ck.config), ck.config.seed);
    if (meta["vocab"].get<std::vector<std::string>>() != ck.model.vocab.tokens()) {
        throw VocabError("'" + path + "': checkpoint vocabulary differs from the built-in vocabulary");
    }
    const auto& stored = file.params.all();
    if (stored.size() != ck.model.params.size()) {
        throw ShapeError("'" + path + "': checkpoint holds " + std::to_string(stored.size()) + " tensors, model expects " +
                         std::to_string(ck.model.params.size()));
    }
    for (const auto& [name, t] : stored) {
        if (!ck.model.params.contains(name)) throw ShapeError("'" + path + "': unexpected tensor '" + name + "'");
        Tensor& dst = ck.model.params.get(name);
        if (dst.shape() != t.shape()) {
            throw ShapeError("'" + path + "': tensor '" + name + "' has shape " + shape_str(t.shape()) + ", model expects " +
                             shape_str(dst.shape()));
        }
        auto src = t.data();
        std::copy(src.begin(), src.end(), dst.mutable_data().begin());
    }
    ck.model.params.set_step(file.params.step());
    return ck;
}

}  // namespace msd
