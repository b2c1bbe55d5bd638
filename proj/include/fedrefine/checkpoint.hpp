#pragma once

#include <string>

#include "fedrefine/fuser.hpp"
#include "fedrefine/model.hpp"

namespace fedrefine {

// Versioned binary containers for trained artifacts.  Model files carry the
// config plus every named weight block with its declared size; fuser files
// add both endpoint configs and their digests so a bridge can never be
// loaded against the wrong pair of models.  Loading validates magic bytes,
// version, and every block's name and size against a freshly constructed
// skeleton.
void save_model(const TransformerModel& m, const std::string& path);
TransformerModel load_model(const std::string& path);

void save_fuser(const Fuser& f, const std::string& path);
Fuser load_fuser(const std::string& path);

}  // namespace fedrefine
