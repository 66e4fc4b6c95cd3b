#include "talecraft/pipeline/project.hpp"

#include <fstream>
#include <sstream>

#include "talecraft/common/error.hpp"
#include "talecraft/common/hash.hpp"

namespace talecraft::pipeline {

namespace fs = std::filesystem;

namespace {

template <typename Map>
nlohmann::ordered_json index_map_to_json(const Map& m) {
    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    for (const auto& [k, v] : m) out[std::to_string(k)] = v;
    return out;
}

std::map<std::size_t, std::string> index_map_from_json(const nlohmann::json& j) {
    std::map<std::size_t, std::string> out;
    for (const auto& [k, v] : j.items()) {
        std::size_t used = 0;
        const auto idx = std::stoul(k, &used);
        if (used != k.size()) throw ParseError("object index is not a number: " + k, j.dump());
        out[idx] = v.get<std::string>();
    }
    return out;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

const CharacterEntry* StoryProject::find_character(const std::string& name) const {
    for (const auto& c : characters) {
        if (c.name == name) return &c;
    }
    return nullptr;
}

Scene& StoryProject::scene(int index) {
    if (index < 0 || index >= static_cast<int>(scenes.size())) {
        throw NotFoundError("project " + id + " has no scene " + std::to_string(index));
    }
    return scenes[static_cast<std::size_t>(index)];
}

const Scene& StoryProject::scene(int index) const {
    return const_cast<StoryProject*>(this)->scene(index);
}

nlohmann::ordered_json to_json(const SceneSetup& setup) {
    nlohmann::ordered_json j;
    j["layout"] = layout::to_json(setup.layout);
    j["characters"] = index_map_to_json(setup.characters);
    j["sketches"] = index_map_to_json(setup.sketches);
    j["sketch_beta"] = setup.sketch_beta;
    return j;
}

SceneSetup scene_setup_from_json(const nlohmann::json& j) {
    SceneSetup s;
    s.layout = layout::scene_layout_from_json(j.at("layout"));
    if (j.contains("characters")) s.characters = index_map_from_json(j.at("characters"));
    if (j.contains("sketches")) s.sketches = index_map_from_json(j.at("sketches"));
    s.sketch_beta = j.value("sketch_beta", 1.0);
    return s;
}

nlohmann::ordered_json to_json(const Scene& scene) {
    nlohmann::ordered_json j;
    j["index"] = scene.index;
    j["prompt"] = scene.prompt;
    j["plain_prompt"] = scene.plain_prompt;
    j["setup"] = to_json(scene.setup);
    j["layout_seed"] = scene.layout_seed;
    j["image"] = scene.image;
    j["seed"] = scene.seed;
    j["passes"] = nlohmann::ordered_json::array();
    for (const auto& p : scene.passes) {
        j["passes"].push_back({{"character", p.character}, {"object_index", p.object_index}, {"seed", p.seed}});
    }
    j["rendered_setup"] = scene.rendered_setup;
    j["videos"] = scene.videos;
    j["dirty"] = scene.dirty;
    j["warnings"] = scene.warnings;
    j["undo"] = nlohmann::ordered_json::array();
    for (const auto& u : scene.undo) j["undo"].push_back(to_json(u));
    return j;
}

nlohmann::ordered_json to_json(const StoryProject& project) {
    nlohmann::ordered_json j;
    j["version"] = project.version;
    j["id"] = project.id;
    j["story"] = project.story;
    j["style"] = project.style;
    j["k"] = project.k;
    j["seed"] = project.seed;
    j["config"] = project.config.entries();
    j["characters"] = nlohmann::ordered_json::array();
    for (const auto& c : project.characters) {
        j["characters"].push_back(
            {{"name", c.name}, {"token", c.token}, {"class_noun", c.class_noun}, {"dir", c.dir}});
    }
    j["scenes"] = nlohmann::ordered_json::array();
    for (const auto& s : project.scenes) j["scenes"].push_back(to_json(s));
    j["warnings"] = project.warnings;
    j["llm_responses"] = project.llm_responses;
    return j;
}

StoryProject story_project_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("version")) throw ParseError("project file has no version field", j.dump());
    const int version = j.at("version").is_number_integer() ? j.at("version").get<int>() : -1;
    if (version != kProjectVersion) {
        throw MigrationError("project version " + j.at("version").dump() + " is not supported (expected " +
                             std::to_string(kProjectVersion) + ")");
    }
    try {
        StoryProject p;
        p.version = version;
        p.id = j.at("id").get<std::string>();
        p.story = j.at("story").get<std::string>();
        p.style = j.at("style").get<std::string>();
        p.k = j.at("k").get<int>();
        p.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& [k, v] : j.at("config").items()) p.config.set(k, v.get<std::string>());
        for (const auto& c : j.at("characters")) {
            p.characters.push_back({c.at("name").get<std::string>(), c.at("token").get<std::string>(),
                                    c.at("class_noun").get<std::string>(), c.at("dir").get<std::string>()});
        }
        for (const auto& s : j.at("scenes")) {
            Scene scene;
            scene.index = s.at("index").get<int>();
            scene.prompt = s.at("prompt").get<std::string>();
            scene.plain_prompt = s.at("plain_prompt").get<std::string>();
            scene.setup = scene_setup_from_json(s.at("setup"));
            scene.layout_seed = s.at("layout_seed").get<std::uint64_t>();
            scene.image = s.at("image").get<std::string>();
            scene.seed = s.at("seed").get<std::uint64_t>();
            for (const auto& ps : s.at("passes")) {
                scene.passes.push_back({ps.at("character").get<std::string>(), ps.at("object_index").get<int>(),
                                        ps.at("seed").get<std::uint64_t>()});
            }
            scene.rendered_setup = s.at("rendered_setup").get<std::string>();
            scene.videos = s.at("videos").get<std::map<std::string, std::string>>();
            scene.dirty = s.at("dirty").get<bool>();
            scene.warnings = s.at("warnings").get<std::vector<std::string>>();
            for (const auto& u : s.at("undo")) scene.undo.push_back(scene_setup_from_json(u));
            p.scenes.push_back(std::move(scene));
        }
        p.warnings = j.at("warnings").get<std::vector<std::string>>();
        p.llm_responses = j.at("llm_responses").get<std::map<std::string, std::string>>();
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed project file: ") + e.what(), j.dump());
    } catch (const std::logic_error& e) {
        throw ParseError(std::string("malformed project file: ") + e.what(), j.dump());
    }
}

std::string fingerprint(const SceneSetup& setup) {
    std::ostringstream hex;
    hex << std::hex << fnv1a(to_json(setup).dump());
    return hex.str();
}

std::string response_key(const std::string& client, const std::string& instruction) {
    std::ostringstream hex;
    hex << std::hex << fnv1a(client + "\n" + instruction);
    return hex.str();
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& purpose, std::uint64_t index) {
    return mix_seed(mix_seed(seed, fnv1a(purpose)), index);
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << bytes;
    }
    fs::rename(tmp, path);
}

void save_project(const StoryProject& project, const fs::path& dir) {
    write_file_atomic(dir / kProjectFile, to_json(project).dump(2) + "\n");
}

StoryProject load_project(const fs::path& dir) {
    const auto path = dir / kProjectFile;
    if (!fs::exists(path)) throw NotFoundError("no project at " + dir.string());
    const auto text = read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("project file is not valid JSON: ") + e.what(), text);
    }
    return story_project_from_json(j);
}

fs::path resolve_asset(const fs::path& dir, const std::string& ref) {
    const fs::path rel(ref);
    if (ref.empty() || rel.is_absolute() || rel.has_root_name()) {
        throw InvalidRequestError("asset reference must be a relative path: " + ref);
    }
    for (const auto& part : rel) {
        if (part == "..") throw InvalidRequestError("asset reference leaves the project: " + ref);
    }
    auto path = dir / rel;
    if (!fs::is_regular_file(path)) throw NotFoundError("no asset " + ref);
    return path;
}

}  // namespace talecraft::pipeline
