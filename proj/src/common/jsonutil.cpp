#include <algorithm>

#include "imarl/jsonutil.hpp"

namespace imarl {

void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                        std::string_view where) {
    if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
        }
    }
}

}  // namespace imarl
