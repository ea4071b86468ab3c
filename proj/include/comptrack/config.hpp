#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "comptrack/errors.hpp"
#include "comptrack/scene.hpp"
#include "comptrack/tracker.hpp"
#include "comptrack/trainer.hpp"

namespace comptrack {

// Flat "key = value" configuration, UTF-8, '#' comments, unknown keys
// rejected. Every key has a default; later assignments win.
struct Config {
    ModelConfig model;
    TrainConfig train;
    SceneParams scene;
    int train_sequences = 200;
    int eval_sequences = 50;
    std::string pe_mode = "sinusoidal";
    int attention_heads = 1;

    void apply(const std::string& key, const std::string& value) {
        auto as_int = [&](const char* name) {
            try {
                size_t pos = 0;
                const int v = std::stoi(value, &pos);
                if (pos != value.size()) throw std::invalid_argument(value);
                return v;
            } catch (const std::exception&) {
                throw ConfigError(std::string("config: bad integer for ") + name + ": " + value);
            }
        };
        auto as_double = [&](const char* name) {
            try {
                size_t pos = 0;
                const double v = std::stod(value, &pos);
                if (pos != value.size()) throw std::invalid_argument(value);
                return v;
            } catch (const std::exception&) {
                throw ConfigError(std::string("config: bad number for ") + name + ": " + value);
            }
        };
        auto as_bool = [&](const char* name) {
            if (value == "1" || value == "true") return true;
            if (value == "0" || value == "false") return false;
            throw ConfigError(std::string("config: bad boolean for ") + name + ": " + value);
        };

        if (key == "class") {
            model.object_class = class_from_name(value);
            scene.object_class = model.object_class;
        } else if (key == "grid_h") {
            model.grid_h = as_int("grid_h");
        } else if (key == "grid_w") {
            model.grid_w = as_int("grid_w");
        } else if (key == "channels") {
            model.channels = as_int("channels");
        } else if (key == "pool_size") {
            model.pool_size = as_int("pool_size");
        } else if (key == "tau") {
            model.tau = as_double("tau");
        } else if (key == "gamma") {
            model.gamma = as_double("gamma");
        } else if (key == "n_max") {
            model.n_max = as_int("n_max");
        } else if (key == "fixed_k") {
            model.fixed_k = as_int("fixed_k");
        } else if (key == "fusion") {
            model.fusion = fusion_from_name(value);
        } else if (key == "compression") {
            model.compression = compression_from_name(value);
        } else if (key == "svd_row_scaling") {
            if (value == "unit")
                model.svd_scale_by_sigma = false;
            else if (value == "sigma")
                model.svd_scale_by_sigma = true;
            else
                throw ConfigError("config: svd_row_scaling must be unit or sigma");
        } else if (key == "pe_mode") {
            if (value != "sinusoidal")
                throw ConfigError("config: pe_mode supports only 'sinusoidal'");
            pe_mode = value;
        } else if (key == "attention_heads") {
            if (as_int("attention_heads") != 1)
                throw ConfigError("config: attention is single-head; attention_heads must be 1");
        } else if (key == "lambda1") {
            model.weights.lambda1 = as_double("lambda1");
        } else if (key == "lambda2") {
            model.weights.lambda2 = as_double("lambda2");
        } else if (key == "lambda3") {
            model.weights.lambda3 = as_double("lambda3");
        } else if (key == "theta1") {
            model.weights.theta1 = as_double("theta1");
        } else if (key == "theta2") {
            model.weights.theta2 = as_double("theta2");
        } else if (key == "epochs") {
            train.epochs = as_int("epochs");
        } else if (key == "batch") {
            train.batch = as_int("batch");
        } else if (key == "lr") {
            train.lr = as_double("lr");
        } else if (key == "lr_decay_factor") {
            train.lr_decay_factor = as_double("lr_decay_factor");
        } else if (key == "lr_decay_every") {
            train.lr_decay_every = as_int("lr_decay_every");
        } else if (key == "weight_decay") {
            train.weight_decay = as_double("weight_decay");
        } else if (key == "pairs_per_epoch") {
            train.pairs_per_epoch = as_int("pairs_per_epoch");
        } else if (key == "threads") {
            train.threads = as_int("threads");
        } else if (key == "augment") {
            train.augment = as_bool("augment");
        } else if (key == "seed") {
            const int v = as_int("seed");
            if (v < 0) throw ConfigError("config: seed must be >= 0");
            train.seed = static_cast<std::uint64_t>(v);
            model.init_seed = static_cast<std::uint64_t>(v);
        } else if (key == "train_sequences") {
            train_sequences = as_int("train_sequences");
        } else if (key == "eval_sequences") {
            eval_sequences = as_int("eval_sequences");
        } else if (key == "frames") {
            scene.n_frames = as_int("frames");
        } else if (key == "clutter_density") {
            scene.clutter_density = as_double("clutter_density");
        } else if (key == "surface_bias") {
            scene.surface_bias = as_double("surface_bias");
        } else if (key == "point_density") {
            scene.point_density = as_double("point_density");
        } else if (key == "noise_sigma") {
            scene.noise_sigma = as_double("noise_sigma");
        } else if (key == "v_max") {
            scene.v_max = as_double("v_max");
        } else {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }

    void validate() const { model.validate(); }

    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    void apply_line(const std::string& raw, const std::string& where) {
        std::string line = raw;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) return;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: expected 'key = value' in " + where + ": " + raw);
        apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }

    static Config from_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file: " + path);
        Config cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            cfg.apply_line(line, path + ":" + std::to_string(lineno));
        }
        cfg.validate();
        return cfg;
    }
};

}  // namespace comptrack
