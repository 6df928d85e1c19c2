#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "coaction/io.hpp"
#include "coaction/model.hpp"
#include "coaction/problems.hpp"
#include "coaction/trainer.hpp"

// File layout: "COACT1\0" + 1 pad byte, u32 LE length of a JSON metadata block, the block,
// then each tensor as float32 LE in manifest order.

namespace coaction {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::array<char, 8> kCheckpointMagic = {'C', 'O', 'A', 'C', 'T', '1', '\0', '\0'};

struct TrainingMeta {
    std::size_t iterations = 0;
    double final_loss = 0.0;
    std::uint64_t seed = 0;
    std::string mode = "multitask";
    double reference_scalar = kDefaultReference;
    std::size_t eval_points = 100;
    double wall_seconds = 0.0;
};

/// A model ready for inference together with the problems it was trained on, normalizers included.
struct LoadedCheckpoint {
    std::unique_ptr<ParetoModel> model;
    ProblemSet problems;
    TrainingMeta meta;

    std::size_t task_index(const std::string& id) const { return model->task_index(id); }
};

inline json to_json(const TrainingMeta& m)
{
    return json{{"iterations", m.iterations},   {"final_loss", m.final_loss},
                {"seed", m.seed},               {"mode", m.mode},
                {"reference_scalar", m.reference_scalar}, {"eval_points", m.eval_points},
                {"wall_seconds", m.wall_seconds}};
}

inline TrainingMeta training_meta_from_json(const json& j)
{
    TrainingMeta m;
    m.iterations = j.at("iterations").get<std::size_t>();
    m.final_loss = j.at("final_loss").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.mode = j.at("mode").get<std::string>();
    m.reference_scalar = j.at("reference_scalar").get<double>();
    m.eval_points = j.at("eval_points").get<std::size_t>();
    m.wall_seconds = j.value("wall_seconds", 0.0);
    return m;
}

inline TrainingMeta training_meta(const TrainConfig& cfg, const TrainTrace& trace)
{
    TrainingMeta m;
    m.iterations = trace.loss.size();
    m.final_loss = trace.loss.empty() ? 0.0 : trace.loss.back();
    m.seed = cfg.seed;
    m.mode = to_string(cfg.mode);
    m.reference_scalar = cfg.reference_scalar;
    m.eval_points = cfg.eval_points;
    m.wall_seconds = trace.wall_seconds;
    return m;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p)
{
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline json model_to_json(const ModelConfig& c, const ProblemSet& problems)
{
    json tasks = json::array();
    for (std::size_t t = 0; t < c.tasks.size(); ++t) {
        const auto& s = c.tasks[t];
        const auto& d = problems[t]->descriptor();
        tasks.push_back(json{{"id", s.id},
                             {"n", s.n},
                             {"m", s.m},
                             {"lower", s.lower},
                             {"upper", s.upper},
                             {"bounded", s.bounded},
                             {"ideal", d.ideal},
                             {"nadir", d.nadir}});
    }
    return json{{"backbone", to_string(c.backbone)},
                {"embed_dim", c.embed_dim},
                {"heads", c.heads},
                {"ff_dim", c.ff_dim},
                {"encoder_layers", c.encoder_layers},
                {"dropout", c.dropout},
                {"pool_hidden", c.pool_hidden},
                {"mlp_hidden", c.mlp_hidden},
                {"d_task", c.d_task},
                {"seed", c.seed},
                {"tasks", tasks}};
}

}  // namespace detail

inline std::string serialize_checkpoint(const ParetoModel& model, const ProblemSet& problems, const TrainingMeta& meta)
{
    const auto& cfg = model.config();
    if (problems.size() != cfg.tasks.size()) {
        throw std::invalid_argument("checkpoint needs one problem per model head");
    }
    json manifest = json::array();
    std::size_t offset = 0;
    for (const auto* p : model.parameters()) {
        manifest.push_back(json{{"name", p->name}, {"shape", p->value.shape()}, {"offset", offset}});
        offset += p->value.size() * sizeof(float);
    }
    const json meta_block{{"format", "COACT1"},
                          {"model", detail::model_to_json(cfg, problems)},
                          {"training_meta", to_json(meta)},
                          {"tensors", manifest}};
    const std::string text = meta_block.dump();

    std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    out.reserve(out.size() + offset);
    for (const auto* p : model.parameters()) {
        for (double v : p->value.values()) {
            detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        }
    }
    return out;
}

inline void save_checkpoint(const std::string& path, const ParetoModel& model, const ProblemSet& problems,
                            const TrainingMeta& meta)
{
    write_text(path, serialize_checkpoint(model, problems, meta));
}

namespace detail {

inline LoadedCheckpoint parse_checkpoint_unchecked(const std::string& bytes)
{
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic.data(), 7) != 0) {
        throw CheckpointError("not a checkpoint file (bad magic)");
    }
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t len = get_u32(raw + 8);
    if (12 + static_cast<std::size_t>(len) > bytes.size()) throw CheckpointError("metadata block is truncated");
    const json meta = json::parse(bytes.substr(12, len));

    LoadedCheckpoint ck;
    std::vector<std::vector<double>> ideals;
    std::vector<std::vector<double>> nadirs;
    ModelConfig cfg;
    {
        const json& mj = meta.at("model");
        cfg.backbone = parse_backbone(mj.at("backbone").get<std::string>());
        cfg.embed_dim = mj.at("embed_dim").get<std::size_t>();
        cfg.heads = mj.at("heads").get<std::size_t>();
        cfg.ff_dim = mj.at("ff_dim").get<std::size_t>();
        cfg.encoder_layers = mj.at("encoder_layers").get<std::size_t>();
        cfg.dropout = mj.at("dropout").get<double>();
        cfg.pool_hidden = mj.at("pool_hidden").get<std::size_t>();
        cfg.mlp_hidden = mj.at("mlp_hidden").get<std::size_t>();
        cfg.d_task = mj.at("d_task").get<std::size_t>();
        cfg.seed = mj.at("seed").get<std::uint64_t>();
        for (const auto& t : mj.at("tasks")) {
            cfg.tasks.push_back(TaskSpec{t.at("id").get<std::string>(), t.at("n").get<std::size_t>(),
                                         t.at("m").get<std::size_t>(), t.at("lower").get<std::vector<double>>(),
                                         t.at("upper").get<std::vector<double>>(), t.at("bounded").get<bool>()});
            ideals.push_back(t.at("ideal").get<std::vector<double>>());
            nadirs.push_back(t.at("nadir").get<std::vector<double>>());
        }
        ck.meta = training_meta_from_json(meta.at("training_meta"));
    }
    ck.model = std::make_unique<ParetoModel>(cfg);

    for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
        std::shared_ptr<Problem> p = make_problem(cfg.tasks[t].id);
        if (p->n() != cfg.tasks[t].n || p->m() != cfg.tasks[t].m) {
            throw CheckpointError("task " + cfg.tasks[t].id + " does not match the registered problem");
        }
        p->set_normalizers(ideals[t], nadirs[t]);
        ck.problems.push_back(std::move(p));
    }

    const std::size_t data_start = 12 + len;
    const std::size_t data_size = bytes.size() - data_start;
    const auto params = ck.model->parameters();
    const json& manifest = meta.at("tensors");
    if (manifest.size() != params.size()) {
        throw CheckpointError("manifest lists " + std::to_string(manifest.size()) + " tensors, model has " +
                              std::to_string(params.size()));
    }
    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const json& entry = manifest[i];
        auto* p = params[i];
        if (entry.at("name").get<std::string>() != p->name) {
            throw CheckpointError("manifest entry " + std::to_string(i) + " is " + entry.at("name").get<std::string>() +
                                  ", expected " + p->name);
        }
        if (entry.at("shape").get<Shape>() != p->value.shape()) {
            throw CheckpointError("tensor " + p->name + " has shape " + to_string(entry.at("shape").get<Shape>()) +
                                  ", expected " + to_string(p->value.shape()));
        }
        const auto offset = entry.at("offset").get<std::size_t>();
        if (offset != expected_offset) throw CheckpointError("tensor " + p->name + " is not contiguous");
        const std::size_t bytes_needed = p->value.size() * sizeof(float);
        if (offset + bytes_needed > data_size) throw CheckpointError("tensor data for " + p->name + " is truncated");
        const auto* src = raw + data_start + offset;
        for (std::size_t k = 0; k < p->value.size(); ++k) {
            p->value[k] = static_cast<double>(std::bit_cast<float>(get_u32(src + 4 * k)));
        }
        expected_offset += bytes_needed;
    }
    if (expected_offset != data_size) throw CheckpointError("trailing bytes after tensor data");
    return ck;
}

}  // namespace detail

inline LoadedCheckpoint parse_checkpoint(const std::string& bytes)
{
    try {
        return detail::parse_checkpoint_unchecked(bytes);
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("malformed metadata: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(std::string("invalid model description: ") + e.what());
    }
}

inline LoadedCheckpoint load_checkpoint(const std::string& path)
{
    std::string bytes;
    try {
        bytes = read_text(path);
    } catch (const std::runtime_error& e) {
        throw CheckpointError(e.what());
    }
    return parse_checkpoint(bytes);
}

}  // namespace coaction
