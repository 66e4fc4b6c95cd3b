#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "talecraft/common/config.hpp"
#include "talecraft/layout/layout.hpp"

namespace talecraft::pipeline {

inline constexpr int kProjectVersion = 1;
inline constexpr const char* kProjectFile = "project.json";

/// The user-editable inputs of one scene. Sketch entries are paths relative
/// to the project directory.
struct SceneSetup {
    layout::SceneLayout layout;
    std::map<std::size_t, std::string> characters;  // object index -> character name
    std::map<std::size_t, std::string> sketches;    // object index -> sketch file
    double sketch_beta = 1.0;

    bool operator==(const SceneSetup&) const = default;
};

struct PassSeed {
    std::string character;
    int object_index = -1;
    std::uint64_t seed = 0;

    bool operator==(const PassSeed&) const = default;
};

struct Scene {
    int index = 0;
    std::string prompt;        // as generated, with the style suffix
    std::string plain_prompt;  // without the style suffix
    SceneSetup setup;
    std::uint64_t layout_seed = 0;
    std::string image;                          // relative path; empty until rendered
    std::uint64_t seed = 0;                     // seed of the stored image
    std::vector<PassSeed> passes;               // per-pass seeds of the stored image
    std::string rendered_setup;                 // fingerprint of the setup the image was made from
    std::map<std::string, std::string> videos;  // preset -> relative clip directory
    bool dirty = true;
    std::vector<std::string> warnings;
    std::vector<SceneSetup> undo;  // oldest first

    bool operator==(const Scene&) const = default;
};

struct CharacterEntry {
    std::string name;
    std::string token;
    std::string class_noun;
    std::string dir;  // relative bundle directory

    bool operator==(const CharacterEntry&) const = default;
};

struct StoryProject {
    int version = kProjectVersion;
    std::string id;
    std::string story;
    std::string style;
    int k = 1;
    std::uint64_t seed = 0;
    Config config;
    std::vector<Scene> scenes;
    std::vector<CharacterEntry> characters;
    std::vector<std::string> warnings;
    /// Language-model responses keyed by response_key(client, instruction).
    std::map<std::string, std::string> llm_responses;

    const CharacterEntry* find_character(const std::string& name) const;
    Scene& scene(int index);
    const Scene& scene(int index) const;

    bool operator==(const StoryProject&) const = default;
};

nlohmann::ordered_json to_json(const SceneSetup& setup);
SceneSetup scene_setup_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const Scene& scene);
nlohmann::ordered_json to_json(const StoryProject& project);
/// Throws ParseError for malformed content and MigrationError for another version.
StoryProject story_project_from_json(const nlohmann::json& j);

/// Stable fingerprint of a setup; the stored image is current while it matches.
std::string fingerprint(const SceneSetup& setup);
/// Cache key of a language-model response: hash of the client name and the instruction.
std::string response_key(const std::string& client, const std::string& instruction);

/// Child seed for a named purpose: derive_seed(project, "render", 2).
std::uint64_t derive_seed(std::uint64_t seed, const std::string& purpose, std::uint64_t index = 0);

/// Writes `dir/project.json` through a temporary file and rename.
void save_project(const StoryProject& project, const std::filesystem::path& dir);
/// Throws NotFoundError if there is no project file.
StoryProject load_project(const std::filesystem::path& dir);

/// Resolves a relative asset reference inside `dir`. Rejects absolute paths
/// and references that leave the directory (InvalidRequestError) and missing
/// files (NotFoundError).
std::filesystem::path resolve_asset(const std::filesystem::path& dir, const std::string& ref);

/// Writes bytes through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace talecraft::pipeline
