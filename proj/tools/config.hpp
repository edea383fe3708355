#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include "citysplat/losses/losses.hpp"
#include "citysplat/partitioner/partitioner.hpp"
#include "citysplat/renderer/renderer.hpp"
#include "citysplat/sagp/sagp.hpp"
#include "citysplat/trainer/trainer.hpp"

namespace citysplat {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Config {
    RenderOptions renderer;
    LossWeights losses;
    PruneConfig sagp;
    PartitionConfig partition;
    TrainConfig trainer; ///< its loss, prune and render members mirror the sections above

    /// Trainer settings with the shared sections copied in.
    TrainConfig train_config(std::uint64_t seed) const;
};

/// Flat "section.key = value" lines; '#' starts a comment. Unknown or
/// repeated keys, malformed values and values outside a module's domain
/// all throw ConfigError naming the line.
Config parse_config(std::string_view text, const std::string& origin = "config");
Config load_config(const std::string& path);

/// Every key with its current value, in parse_config's syntax.
std::string config_to_text(const Config& config);

} // namespace citysplat
