#include "mhg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace mhg {

using nlohmann::json;

void DatasetConfig::validate() const {
    if (!(scale_factor > 0.0 && scale_factor <= 1.0)) throw std::runtime_error("config: scale_factor must be in (0,1]");
    if (min_landmarks < 3) throw std::runtime_error("config: min_landmarks must be >= 3");
    if (resolutions.empty()) throw std::runtime_error("config: resolutions must list at least one level");
    if (organ_labels.empty()) throw std::runtime_error("config: organs must be nonempty");
    std::set<int> seen;
    for (int o : organ_labels) {
        if (o <= 0 || o > 255) throw std::runtime_error("config: organ labels must be in 1..255");
        if (!seen.insert(o).second) throw std::runtime_error("config: organ labels must be distinct");
    }
    if (organ_names.size() != organ_labels.size()) throw std::runtime_error("config: organ_names must match organs in length");
    if (input_size <= 0 || input_size % 2 != 0) throw std::runtime_error("config: inputsize must be a positive even number");
    if (rotate_max_deg < 0.0) throw std::runtime_error("config: rotate_max_deg must be >= 0");
    if (graph_mode != "independent" && graph_mode != "unified") throw std::runtime_error("config: graph_mode must be independent or unified");
    if (unified_delta <= 0.0) throw std::runtime_error("config: unified_delta must be > 0");
    if (model.latent_dim < 1 || model.cheb_order < 1 || model.cheb_width < 1 || model.cheb_layers < 1)
        throw std::runtime_error("config: model dimensions must be >= 1");
    if (model.encoder_widths.size() < static_cast<size_t>(resolution_levels()))
        throw std::runtime_error("config: need at least one encoder stage per resolution level");
    if (train.iterations < 1 || train.batch_size < 1) throw std::runtime_error("config: train.iterations and train.batch_size must be >= 1");
    if (!(train.test_fraction > 0.0 && train.test_fraction < 1.0)) throw std::runtime_error("config: train.test_fraction must be in (0,1)");
    if (fit.iterations < 1) throw std::runtime_error("config: fit.iterations must be >= 1");
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw std::runtime_error("config: unknown key '" + where + it.key() + "'");
        }
    }
}

int organ_label_from(const json& v) {
    if (v.is_number_integer()) return v.get<int>();
    if (v.is_string()) {
        try {
            return std::stoi(v.get<std::string>());
        } catch (const std::exception&) {
            throw std::runtime_error("config: organ label '" + v.get<std::string>() + "' is not an integer");
        }
    }
    throw std::runtime_error("config: organ labels must be integers or numeric strings");
}

}  // namespace

DatasetConfig config_from_json(const json& j) {
    DatasetConfig cfg;
    check_keys(j, {"scale_factor", "resolutions", "organs", "organ_names", "inputsize",
                   "flip_h", "flip_v", "rotate", "transpose", "rotate_max_deg",
                   "min_landmarks", "seed", "graph_mode", "unified_delta",
                   "model", "train", "fit"},
               "");

    if (j.contains("scale_factor")) cfg.scale_factor = j.at("scale_factor").get<double>();
    if (j.contains("resolutions")) cfg.resolutions = j.at("resolutions").get<std::vector<std::string>>();
    if (j.contains("organs")) {
        cfg.organ_labels.clear();
        for (const auto& v : j.at("organs")) cfg.organ_labels.push_back(organ_label_from(v));
    }
    if (j.contains("organ_names")) {
        cfg.organ_names = j.at("organ_names").get<std::vector<std::string>>();
    } else if (j.contains("organs")) {
        cfg.organ_names.clear();
        for (int o : cfg.organ_labels) cfg.organ_names.push_back("organ" + std::to_string(o));
    }
    if (j.contains("inputsize")) cfg.input_size = j.at("inputsize").get<int>();
    if (j.contains("flip_h")) cfg.aug_flip_h = j.at("flip_h").get<bool>();
    if (j.contains("flip_v")) cfg.aug_flip_v = j.at("flip_v").get<bool>();
    if (j.contains("rotate")) cfg.aug_rotate = j.at("rotate").get<bool>();
    if (j.contains("transpose")) cfg.aug_transpose = j.at("transpose").get<bool>();
    if (j.contains("rotate_max_deg")) cfg.rotate_max_deg = j.at("rotate_max_deg").get<double>();
    if (j.contains("min_landmarks")) cfg.min_landmarks = j.at("min_landmarks").get<int>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
    if (j.contains("graph_mode")) cfg.graph_mode = j.at("graph_mode").get<std::string>();
    if (j.contains("unified_delta")) cfg.unified_delta = j.at("unified_delta").get<double>();

    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, {"encoder_widths", "latent_dim", "cheb_order", "cheb_width", "cheb_layers",
                       "dual", "leaky_slope", "raster_sigma_px"},
                   "model.");
        if (m.contains("encoder_widths")) cfg.model.encoder_widths = m.at("encoder_widths").get<std::vector<int>>();
        if (m.contains("latent_dim")) cfg.model.latent_dim = m.at("latent_dim").get<int>();
        if (m.contains("cheb_order")) cfg.model.cheb_order = m.at("cheb_order").get<int>();
        if (m.contains("cheb_width")) cfg.model.cheb_width = m.at("cheb_width").get<int>();
        if (m.contains("cheb_layers")) cfg.model.cheb_layers = m.at("cheb_layers").get<int>();
        if (m.contains("dual")) cfg.model.dual = m.at("dual").get<bool>();
        if (m.contains("leaky_slope")) cfg.model.leaky_slope = m.at("leaky_slope").get<double>();
        if (m.contains("raster_sigma_px")) cfg.model.raster_sigma_px = m.at("raster_sigma_px").get<double>();
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t, {"iterations", "batch_size", "learning_rate", "batch_ramp_fraction",
                       "beta_gamma_decay_decades", "val_interval", "test_fraction",
                       "use_raster_loss", "mask_input"},
                   "train.");
        if (t.contains("iterations")) cfg.train.iterations = t.at("iterations").get<int>();
        if (t.contains("batch_size")) cfg.train.batch_size = t.at("batch_size").get<int>();
        if (t.contains("learning_rate")) cfg.train.learning_rate = t.at("learning_rate").get<double>();
        if (t.contains("batch_ramp_fraction")) cfg.train.batch_ramp_fraction = t.at("batch_ramp_fraction").get<double>();
        if (t.contains("beta_gamma_decay_decades")) cfg.train.beta_gamma_decay_decades = t.at("beta_gamma_decay_decades").get<double>();
        if (t.contains("val_interval")) cfg.train.val_interval = t.at("val_interval").get<int>();
        if (t.contains("test_fraction")) cfg.train.test_fraction = t.at("test_fraction").get<double>();
        if (t.contains("use_raster_loss")) cfg.train.use_raster_loss = t.at("use_raster_loss").get<bool>();
        if (t.contains("mask_input")) cfg.train.mask_input = t.at("mask_input").get<bool>();
    }
    if (j.contains("fit")) {
        const json& f = j.at("fit");
        check_keys(f, {"iterations", "learning_rate"}, "fit.");
        if (f.contains("iterations")) cfg.fit.iterations = f.at("iterations").get<int>();
        if (f.contains("learning_rate")) cfg.fit.learning_rate = f.at("learning_rate").get<double>();
    }

    cfg.validate();
    return cfg;
}

json config_to_json(const DatasetConfig& cfg) {
    json j;
    j["scale_factor"] = cfg.scale_factor;
    j["resolutions"] = cfg.resolutions;
    json organs = json::array();
    for (int o : cfg.organ_labels) organs.push_back(std::to_string(o));
    j["organs"] = organs;
    j["organ_names"] = cfg.organ_names;
    j["inputsize"] = cfg.input_size;
    j["flip_h"] = cfg.aug_flip_h;
    j["flip_v"] = cfg.aug_flip_v;
    j["rotate"] = cfg.aug_rotate;
    j["transpose"] = cfg.aug_transpose;
    j["rotate_max_deg"] = cfg.rotate_max_deg;
    j["min_landmarks"] = cfg.min_landmarks;
    j["seed"] = cfg.seed;
    j["graph_mode"] = cfg.graph_mode;
    j["unified_delta"] = cfg.unified_delta;
    j["model"] = {{"encoder_widths", cfg.model.encoder_widths},
                  {"latent_dim", cfg.model.latent_dim},
                  {"cheb_order", cfg.model.cheb_order},
                  {"cheb_width", cfg.model.cheb_width},
                  {"cheb_layers", cfg.model.cheb_layers},
                  {"dual", cfg.model.dual},
                  {"leaky_slope", cfg.model.leaky_slope},
                  {"raster_sigma_px", cfg.model.raster_sigma_px}};
    j["train"] = {{"iterations", cfg.train.iterations},
                  {"batch_size", cfg.train.batch_size},
                  {"learning_rate", cfg.train.learning_rate},
                  {"batch_ramp_fraction", cfg.train.batch_ramp_fraction},
                  {"beta_gamma_decay_decades", cfg.train.beta_gamma_decay_decades},
                  {"val_interval", cfg.train.val_interval},
                  {"test_fraction", cfg.train.test_fraction},
                  {"use_raster_loss", cfg.train.use_raster_loss},
                  {"mask_input", cfg.train.mask_input}};
    j["fit"] = {{"iterations", cfg.fit.iterations}, {"learning_rate", cfg.fit.learning_rate}};
    return j;
}

DatasetConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("config: parse failure in '" + path + "': " + e.what());
    }
    return config_from_json(j);
}

void save_config(const DatasetConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("config: cannot write '" + path + "'");
    out << config_to_json(cfg).dump(2) << "\n";
}

void apply_override(json& j, const std::string& dotted_key, const std::string& value) {
    json* node = &j;
    std::stringstream ss(dotted_key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw std::runtime_error("override: empty key");
    for (size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;  // plain string
    (*node)[parts.back()] = parsed;
}

uint64_t config_hash(const DatasetConfig& cfg) {
    return fnv1a(config_to_json(cfg).dump());
}

}  // namespace mhg
