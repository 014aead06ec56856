#include "sinklab/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "serialize_internal.hpp"

namespace sinklab {

namespace {
constexpr char kMagic[8] = {'S', 'N', 'K', 'L', 'A', 'B', '0', '1'};

void write_u64(std::ostream& os, uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

uint64_t read_u64(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return v;
}

void write_tensor_data(std::ostream& os, const Tensor& t) {
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

void read_tensor_data(std::istream& is, Tensor& t) {
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
}
}  // namespace

std::string model_config_to_json_string(const ModelConfig& cfg) {
    return model_config_to_json(cfg).dump();
}

ModelConfig model_config_from_json_string(const std::string& s) {
    return model_config_from_json(nlohmann::json::parse(s));
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    nlohmann::json header;
    header["format"] = 1;
    header["seed"] = ckpt.seed;
    header["model"] = model_config_to_json(ckpt.config);
    header["experiment"] = ckpt.experiment_json.empty()
                               ? nlohmann::json(nullptr)
                               : nlohmann::json::parse(ckpt.experiment_json);
    nlohmann::json tensors = nlohmann::json::array();
    ckpt.params.for_each([&](const std::string& name, const Tensor& t) {
        tensors.push_back({{"name", name}, {"shape", t.shape()}});
    });
    nlohmann::json adapters = nlohmann::json::array();
    for (const LoraAdapter& ad : ckpt.adapters) {
        adapters.push_back({{"layer", ad.layer},
                            {"target", lora_target_name(ad.target)},
                            {"rank", ad.rank},
                            {"scale", ad.scale}});
    }
    header["tensors"] = tensors;
    header["adapters"] = adapters;
    const std::string hs = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    SINKLAB_CHECK_RUNTIME(os.good(), "cannot open checkpoint for writing: " << path);
    os.write(kMagic, 8);
    write_u64(os, hs.size());
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    ckpt.params.for_each([&](const std::string&, const Tensor& t) { write_tensor_data(os, t); });
    for (const LoraAdapter& ad : ckpt.adapters) {
        write_tensor_data(os, ad.a);
        write_tensor_data(os, ad.b);
    }
    SINKLAB_CHECK_RUNTIME(os.good(), "checkpoint write failed: " << path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    SINKLAB_CHECK_RUNTIME(is.good(), "cannot open checkpoint: " << path);
    char magic[8];
    is.read(magic, 8);
    SINKLAB_CHECK_RUNTIME(is.good() && std::memcmp(magic, kMagic, 8) == 0,
                          "not a checkpoint file: " << path);
    const uint64_t hlen = read_u64(is);
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    SINKLAB_CHECK_RUNTIME(is.good(), "truncated checkpoint header: " << path);
    const nlohmann::json header = nlohmann::json::parse(hs);

    Checkpoint ckpt;
    ckpt.config = model_config_from_json(header.at("model"));
    ckpt.seed = header.at("seed").get<uint64_t>();
    if (!header.at("experiment").is_null()) ckpt.experiment_json = header.at("experiment").dump();

    // Rebuild parameter holders with the recorded shapes, then stream data in
    // the exact order it was written.
    Rng scratch(0);
    ckpt.params = ModelParams::init(ckpt.config, scratch);
    size_t idx = 0;
    const auto& tensors = header.at("tensors");
    ckpt.params.for_each([&](const std::string& name, Tensor& t) {
        SINKLAB_CHECK_RUNTIME(idx < tensors.size(), "checkpoint tensor directory too short");
        const auto& entry = tensors.at(idx++);
        SINKLAB_CHECK_RUNTIME(entry.at("name").get<std::string>() == name,
                              "checkpoint tensor order mismatch at " << name);
        const auto shape = entry.at("shape").get<std::vector<int64_t>>();
        SINKLAB_CHECK_RUNTIME(shape == t.shape(), "checkpoint tensor shape mismatch at " << name);
        read_tensor_data(is, t);
    });
    SINKLAB_CHECK_RUNTIME(idx == tensors.size(), "checkpoint has extra tensors");

    for (const auto& aj : header.at("adapters")) {
        LoraAdapter ad;
        ad.layer = aj.at("layer").get<int64_t>();
        ad.target = lora_target_from_name(aj.at("target").get<std::string>());
        ad.rank = aj.at("rank").get<int64_t>();
        ad.scale = aj.at("scale").get<double>();
        ad.a = Tensor({ad.rank, ckpt.config.d_model});
        ad.b = Tensor({ckpt.config.d_model, ad.rank});
        read_tensor_data(is, ad.a);
        read_tensor_data(is, ad.b);
        ckpt.adapters.push_back(std::move(ad));
    }
    SINKLAB_CHECK_RUNTIME(is.good(), "truncated checkpoint data: " << path);
    return ckpt;
}

}  // namespace sinklab
