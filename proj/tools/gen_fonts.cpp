// Regenerates the bundled synthetic faces in data/fonts/ from the sample
// stroke dictionary. The outputs are committed; rerun after dictionary edits.

#include <iostream>

#include "calli/stroke_codec.hpp"
#include "calli/vector_font.hpp"

int main(int argc, char** argv) {
    using namespace calli;
    const std::string dict_path = argc > 1 ? argv[1] : "data/stroke_dict.tsv";
    const std::string out_dir = argc > 2 ? argv[2] : "data/fonts";

    const StrokeDictionary dict = StrokeDictionary::load(dict_path);

    SynthFontSpec kai;  // upright, uniform brush: the pretraining face
    kai.name = "kai-a";
    kai.style = {14.0, 0.10, 0.0, 0.0};
    kai.layout_seed = 7;

    SynthFontSpec xing;  // slanted, tapered, wavy: the target "calligrapher"
    xing.name = "xing-b";
    xing.style = {11.0, 0.55, 0.18, 3.5};
    xing.layout_seed = 7;

    SynthFontSpec li;  // wide flat strokes, held out for font conditioning
    li.name = "li-c";
    li.style = {20.0, 0.0, -0.06, 0.0};
    li.holdout = true;
    li.layout_seed = 7;

    for (const auto& spec : {kai, xing, li}) {
        const VectorFont font = synthesize_font(dict, spec);
        const auto path = std::string(out_dir) + "/" + spec.name + ".json";
        font.save(path);
        std::cout << "wrote " << path << " (" << font.glyphs.size() << " glyphs)\n";
    }
    return 0;
}
