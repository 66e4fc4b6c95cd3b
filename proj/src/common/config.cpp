#include "talecraft/common/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "talecraft/common/error.hpp"

namespace talecraft {

namespace {

std::string trim(const std::string& s) {
    auto begin = std::find_if_not(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
    auto end = std::find_if_not(s.rbegin(), s.rend(), [](unsigned char c) { return std::isspace(c); }).base();
    return begin < end ? std::string(begin, end) : std::string();
}

std::string unquote(const std::string& s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
        return s.substr(1, s.size() - 2);
    }
    return s;
}

}  // namespace

Config Config::defaults() {
    Config c;
    // story to prompts
    c.set("s2p.backend", "stub");
    c.set("s2p.protocol", "simple");
    c.set("s2p.endpoint", "http://127.0.0.1:8089/generate");
    c.set("s2p.model", "gpt-4");
    c.set("s2p.timeout_s", "60");
    c.set("s2p.template", "v1");
    // text to layout
    c.set("t2l.m_bins", "64");
    c.set("t2l.n_max", "16");
    c.set("t2l.timesteps", "50");
    c.set("t2l.mode", "absorbing");
    c.set("t2l.lambda", "0.1");
    c.set("t2l.keep_multiplicity", "false");
    c.set("t2l.layers", "4");
    c.set("t2l.width", "256");
    c.set("t2l.heads", "4");
    c.set("t2l.weights", "");
    c.set("t2l.corpus", "synthetic");
    c.set("t2l.corpus_size", "512");
    c.set("t2l.corpus_dir", "");
    c.set("t2l.epochs", "20");
    c.set("t2l.batch_size", "32");
    c.set("t2l.lr", "0.0005");
    c.set("t2l.init_seed", "0");
    // controllable text to image
    c.set("ct2i.image_size", "64");
    c.set("ct2i.latent", "autoencoder");
    c.set("ct2i.lora_rank", "4");
    c.set("ct2i.guidance", "6");
    c.set("ct2i.ddim_steps", "50");
    c.set("ct2i.train_timesteps", "1000");
    c.set("ct2i.cond_dropout", "0.1");
    c.set("ct2i.sketch_beta", "1.0");
    c.set("ct2i.personalize_lr", "0.0001");
    c.set("ct2i.personalize_steps", "200");
    c.set("ct2i.reg_images", "50");
    c.set("ct2i.weights", "");
    c.set("ct2i.init_seed", "0");
    // image to video
    c.set("i2v.frames", "48");
    c.set("i2v.fps", "12");
    c.set("i2v.amplitude", "");
    c.set("i2v.fov_deg", "60");
    c.set("i2v.mux_command", "");
    // pipeline
    c.set("pipeline.undo_depth", "16");
    // evaluation
    c.set("eval.backend", "mock");
    c.set("eval.dimension", "128");
    c.set("eval.endpoint", "");
    return c;
}

Config Config::parse(const std::string& text) {
    Config c;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line.front() == '#') {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        auto key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        }
        if (!section.empty()) {
            key = section + "." + key;
        }
        c.set(key, unquote(trim(line.substr(eq + 1))));
    }
    return c;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

void Config::merge(const Config& overrides) {
    for (const auto& [k, v] : overrides.entries_) {
        entries_[k] = v;
    }
}

bool Config::contains(const std::string& key) const { return entries_.count(key) != 0; }

void Config::set(const std::string& key, std::string value) { entries_[key] = std::move(value); }

const std::string& Config::require(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
        throw ConfigError("missing config key " + key);
    }
    return it->second;
}

std::string Config::get_string(const std::string& key) const { return require(key); }

int Config::get_int(const std::string& key) const {
    const auto& v = require(key);
    int out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("config key " + key + " is not an integer: " + v);
    }
    return out;
}

double Config::get_double(const std::string& key) const {
    const auto& v = require(key);
    try {
        std::size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) {
            throw ConfigError("config key " + key + " is not a number: " + v);
        }
        return out;
    } catch (const std::logic_error&) {
        throw ConfigError("config key " + key + " is not a number: " + v);
    }
}

bool Config::get_bool(const std::string& key) const {
    auto v = require(key);
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key " + key + " is not a boolean: " + v);
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    return contains(key) ? get_string(key) : fallback;
}
int Config::get_int(const std::string& key, int fallback) const { return contains(key) ? get_int(key) : fallback; }
double Config::get_double(const std::string& key, double fallback) const {
    return contains(key) ? get_double(key) : fallback;
}
bool Config::get_bool(const std::string& key, bool fallback) const {
    return contains(key) ? get_bool(key) : fallback;
}

std::string Config::to_string() const {
    std::string out;
    for (const auto& [k, v] : entries_) {
        out += k;
        out += " = ";
        bool needs_quotes = v.empty() || v.find_first_of(" #\"") != std::string::npos;
        out += needs_quotes ? "\"" + v + "\"" : v;
        out += '\n';
    }
    return out;
}

}  // namespace talecraft
