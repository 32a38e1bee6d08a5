#include "vstain/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "vstain/hash.hpp"

namespace vstain {

diffusion::NoiseSchedule ScheduleConfig::make() const {
    if (kind == "linear") return diffusion::make_linear_schedule(steps, beta_start, beta_end);
    if (kind == "cosine") return diffusion::make_cosine_schedule(steps);
    throw std::invalid_argument("schedule.kind must be linear or cosine, got '" + kind + "'");
}

denoiser::UNetConfig RunConfig::desk_unet() {
    denoiser::UNetConfig c;
    c.image_size = 32;
    c.base_channels = 8;
    c.channel_multipliers = {1, 2, 2};
    c.time_embed_dim = 32;
    c.fft_attention_levels = {0, 1, 2};
    c.norm_groups = 1;
    return c;
}

multitask::AdamConfig RunConfig::desk_adam() {
    multitask::AdamConfig a;
    a.lr = 2e-3;
    a.schedule = multitask::LrSchedule::cosine;
    return a;
}

multitask::AdamConfig RunConfig::adam_for(long total_steps) const {
    multitask::AdamConfig a = adam;
    a.decay_steps = total_steps;
    return a;
}

namespace {

std::string fmt(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

std::string fmt(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string fmt(const data::Vec3& v) {
    return fmt(v[0]) + "," + fmt(v[1]) + "," + fmt(v[2]);
}

template <class T>
T parse_number(const std::string& key, const std::string& s) {
    T v{};
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw std::invalid_argument("config key '" + key + "': cannot parse '" + s + "'");
    return v;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, ',')) {
        const auto a = cur.find_first_not_of(" \t"), b = cur.find_last_not_of(" \t");
        out.push_back(a == std::string::npos ? "" : cur.substr(a, b - a + 1));
    }
    return out;
}

std::vector<int> parse_ints(const std::string& key, const std::string& s) {
    std::vector<int> out;
    if (s.empty()) return out;
    for (const auto& p : split_list(s)) out.push_back(parse_number<int>(key, p));
    return out;
}

data::Vec3 parse_vec3(const std::string& key, const std::string& s) {
    const auto p = split_list(s);
    if (p.size() != 3) throw std::invalid_argument("config key '" + key + "': expected three comma-separated values");
    return {parse_number<double>(key, p[0]), parse_number<double>(key, p[1]), parse_number<double>(key, p[2])};
}

bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw std::invalid_argument("config key '" + key + "': expected true or false, got '" + s + "'");
}

struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string& key, const std::string&)> set;
};

#define VSTAIN_NUM(KEY, MEMBER, TYPE)                                                                    \
    Field {                                                                                              \
        KEY, [](const RunConfig& c) { return fmt(static_cast<double>(c.MEMBER)); },                      \
            [](RunConfig& c, const std::string& k, const std::string& v) { c.MEMBER = parse_number<TYPE>(k, v); } \
    }
#define VSTAIN_INT(KEY, MEMBER, TYPE)                                                                    \
    Field {                                                                                              \
        KEY, [](const RunConfig& c) { return std::to_string(c.MEMBER); },                                \
            [](RunConfig& c, const std::string& k, const std::string& v) { c.MEMBER = parse_number<TYPE>(k, v); } \
    }
#define VSTAIN_STR(KEY, MEMBER)                                                                          \
    Field {                                                                                              \
        KEY, [](const RunConfig& c) { return c.MEMBER; },                                                \
            [](RunConfig& c, const std::string&, const std::string& v) { c.MEMBER = v; }                 \
    }
#define VSTAIN_VEC3(KEY, MEMBER)                                                                         \
    Field {                                                                                              \
        KEY, [](const RunConfig& c) { return fmt(c.MEMBER); },                                           \
            [](RunConfig& c, const std::string& k, const std::string& v) { c.MEMBER = parse_vec3(k, v); } \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        Field{"run.model", [](const RunConfig& c) { return multitask::to_string(c.model); },
              [](RunConfig& c, const std::string&, const std::string& v) { c.model = multitask::model_kind_from_string(v); }},
        VSTAIN_INT("run.seed", seed, std::uint64_t),
        VSTAIN_STR("run.manifest", manifest),
        VSTAIN_INT("model.image_size", unet.image_size, int),
        VSTAIN_INT("model.base_channels", unet.base_channels, int),
        Field{"model.channel_multipliers", [](const RunConfig& c) { return fmt(c.unet.channel_multipliers); },
              [](RunConfig& c, const std::string& k, const std::string& v) { c.unet.channel_multipliers = parse_ints(k, v); }},
        VSTAIN_INT("model.time_embed_dim", unet.time_embed_dim, int),
        Field{"model.fft_attention_levels", [](const RunConfig& c) { return fmt(c.unet.fft_attention_levels); },
              [](RunConfig& c, const std::string& k, const std::string& v) { c.unet.fft_attention_levels = parse_ints(k, v); }},
        VSTAIN_INT("model.norm_groups", unet.norm_groups, int),
        Field{"model.fusion", [](const RunConfig& c) { return denoiser::to_string(c.unet.fusion); },
              [](RunConfig& c, const std::string&, const std::string& v) { c.unet.fusion = denoiser::fusion_from_string(v); }},
        VSTAIN_STR("schedule.kind", schedule.kind),
        VSTAIN_INT("schedule.steps", schedule.steps, int),
        VSTAIN_NUM("schedule.beta_start", schedule.beta_start, double),
        VSTAIN_NUM("schedule.beta_end", schedule.beta_end, double),
        VSTAIN_NUM("optim.lr", adam.lr, double),
        VSTAIN_NUM("optim.beta1", adam.beta1, double),
        VSTAIN_NUM("optim.beta2", adam.beta2, double),
        VSTAIN_NUM("optim.eps", adam.eps, double),
        Field{"optim.lr_schedule", [](const RunConfig& c) { return multitask::to_string(c.adam.schedule); },
              [](RunConfig& c, const std::string&, const std::string& v) { c.adam.schedule = multitask::lr_schedule_from_string(v); }},
        VSTAIN_INT("train.steps", train.steps, long),
        VSTAIN_INT("train.epochs", train.epochs, int),
        VSTAIN_INT("train.batch_size", train.batch_size, int),
        VSTAIN_INT("train.checkpoint_every", train.checkpoint_every, long),
        VSTAIN_NUM("train.gen_weight", train.weights.gen, double),
        VSTAIN_NUM("train.seg_weight", train.weights.seg, double),
        Field{"sample.clamp_x0", [](const RunConfig& c) { return std::string(c.clamp_x0 ? "true" : "false"); },
              [](RunConfig& c, const std::string& k, const std::string& v) { c.clamp_x0 = parse_bool(k, v); }},
        VSTAIN_INT("data.scenes", dataset.scenes, int),
        VSTAIN_NUM("data.test_fraction", dataset.test_fraction, double),
        VSTAIN_INT("data.canvas", dataset.scene.canvas, int),
        VSTAIN_INT("data.min_cells", dataset.scene.min_cells, int),
        VSTAIN_INT("data.max_cells", dataset.scene.max_cells, int),
        VSTAIN_NUM("data.cell_radius_min", dataset.scene.cell_radius_min, double),
        VSTAIN_NUM("data.cell_radius_max", dataset.scene.cell_radius_max, double),
        VSTAIN_NUM("data.target_fraction", dataset.scene.target_fraction, double),
        VSTAIN_NUM("data.discriminability", dataset.scene.discriminability, double),
        VSTAIN_NUM("data.background_fraction", dataset.scene.background_fraction, double),
        VSTAIN_VEC3("data.stain_hematoxylin", dataset.scene.palette.hematoxylin),
        VSTAIN_VEC3("data.stain_eosin", dataset.scene.palette.eosin),
        VSTAIN_VEC3("data.stain_dab", dataset.scene.palette.dab),
        VSTAIN_INT("data.patch_size", dataset.tiling.patch_size, int),
        VSTAIN_INT("data.overlap", dataset.tiling.overlap, int),
        VSTAIN_NUM("data.tissue_fraction_min", dataset.tiling.tissue_fraction_min, double),
        VSTAIN_NUM("coarse.od_threshold", dataset.coarse.od_threshold, double),
        VSTAIN_INT("coarse.min_object_px", dataset.coarse.min_object_px, int),
        VSTAIN_STR("eval.extractor", eval.extractor),
        VSTAIN_STR("eval.fid_extractor", eval.fid_extractor),
        VSTAIN_INT("eval.projection_dim", eval.projection_dim, int),
        VSTAIN_INT("eval.fd_inf_reps", eval.fd_inf_reps, int),
    };
    return f;
}

#undef VSTAIN_NUM
#undef VSTAIN_INT
#undef VSTAIN_STR
#undef VSTAIN_VEC3

}  // namespace

std::vector<std::string> RunConfig::keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
}

std::map<std::string, std::string> RunConfig::canonical() const {
    std::map<std::string, std::string> out;
    for (const auto& f : fields()) out[f.key] = f.get(*this);
    return out;
}

std::string RunConfig::canonical_ini() const {
    std::string out, section;
    for (const auto& [key, value] : canonical()) {
        const auto dot = key.find('.');
        const std::string s = key.substr(0, dot);
        if (s != section) {
            out += (section.empty() ? "[" : "\n[") + s + "]\n";
            section = s;
        }
        out += key.substr(dot + 1) + " = " + value + "\n";
    }
    return out;
}

std::string RunConfig::hash() const {
    return hash_hex(canonical_ini());
}

void RunConfig::set(const std::string& key, const std::string& value) {
    for (const auto& f : fields())
        if (f.key == key) {
            f.set(*this, key, value);
            return;
        }
    throw std::invalid_argument("unknown config key '" + key + "'");
}

void RunConfig::validate() const {
    unet.validate();
    schedule.make();
    dataset.scene.validate();
    dataset.tiling.validate();
    if (train.batch_size < 1) throw std::invalid_argument("train.batch_size must be positive");
    if (train.steps < 0 || train.epochs < 0) throw std::invalid_argument("train.steps and train.epochs must be >= 0");
    if (!(adam.lr >= 0)) throw std::invalid_argument("optim.lr must be >= 0");
    if (dataset.tiling.patch_size % unet.image_size)
        throw std::invalid_argument("data.patch_size must be a multiple of model.image_size");
    if (!(dataset.coarse.od_threshold > 0)) throw std::invalid_argument("coarse.od_threshold must be positive");
}

RunConfig RunConfig::from_ini(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream is(text);
    try {
        pt::ini_parser::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw std::invalid_argument(std::string("config parse error: ") + e.what());
    }
    RunConfig c;
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw std::invalid_argument("config key '" + section + "' is outside any section");
        for (const auto& [key, value] : body) c.set(section + "." + key, value.get_value<std::string>());
    }
    c.validate();
    return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("cannot open config " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return from_ini(ss.str());
}

}  // namespace vstain
