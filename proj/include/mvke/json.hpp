#pragma once

// Single place that pulls in nlohmann/json so the include path is uniform.
#include <json.hpp>
