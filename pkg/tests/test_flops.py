import pytest

from ianet.block import IAConfig
from ianet.errors import ConfigurationError
from ianet.harness.flops import RESNET50_PRESET, flop_report, resnet50_layers
from ianet.model import BackboneConfig

# default toy backbone on 3x64x32, written out layer by layer
TOY_LAYERS = {
    "stem": 16 * 3 * 9 * 64 * 32,
    "stage1": 16 * 16 * 9 * 64 * 32,
    "stage2": 32 * 16 * 9 * 32 * 16,
    "stage3": 64 * 32 * 9 * 16 * 8,
    "stage4": 128 * 64 * 9 * 16 * 8,
    "classifier": 128 * 2,
}
IA2 = 2 * 32 * 512**2 + 2 * 512 * 32**2
IA3 = 2 * 64 * 128**2 + 2 * 128 * 64**2


class TestToy:
    def test_no_blocks(self):
        r = flop_report(BackboneConfig(ia_placement=()))
        assert r.ia == 0 and r.overhead == 0.0

    def test_per_layer_oracle(self):
        r = flop_report(BackboneConfig())
        assert dict(r.layers) == {**TOY_LAYERS, "ia2": IA2, "ia3": IA3}
        assert r.backbone == sum(TOY_LAYERS.values())
        assert r.ia == IA2 + IA3

    def test_additive_over_stages(self):
        a = flop_report(BackboneConfig(ia_placement=(2,)))
        b = flop_report(BackboneConfig(ia_placement=(3,)))
        both = flop_report(BackboneConfig(ia_placement=(2, 3)))
        assert both.ia == a.ia + b.ia
        assert both.backbone == a.backbone == b.backbone

    def test_placement_override(self):
        assert flop_report(BackboneConfig(), placement=(3,)).ia == IA3

    def test_sia_only(self):
        assert flop_report(BackboneConfig(), placement=(3,), sia_only=True).ia == 2 * 64 * 128**2

    def test_reproducible(self):
        assert flop_report(BackboneConfig()).to_tsv() == flop_report(BackboneConfig()).to_tsv()

    def test_tsv(self):
        text = flop_report(BackboneConfig(ia_placement=())).to_tsv()
        assert text.splitlines()[0] == "layer\tmultiplies"
        assert "relative_overhead\t0.000000%" in text


class TestResNet50:
    def test_classic_geometry_matches_published_count(self):
        # torchvision ResNet-50 at 224x224: 4,089,184,256 multiply-accumulates
        layers, geometry = resnet50_layers((224, 224), remove_last_stride=False, num_classes=1000)
        assert sum(n for _, n in layers) == 4_089_184_256
        assert geometry[4] == (2048, 7, 7)

    def test_reid_geometry(self):
        _, geometry = resnet50_layers()
        assert geometry[3] == (1024, 16, 8)
        assert geometry[4] == (2048, 16, 8)

    def test_sia_overhead_at_stage3(self):
        r = flop_report(RESNET50_PRESET, placement=(3,), sia_only=True)
        assert r.ia == 33_554_432
        assert r.backbone == 4_053_270_528
        assert 0.005 <= r.overhead <= 0.010

    def test_preset_without_blocks(self):
        assert flop_report(RESNET50_PRESET).ia == 0

    def test_multi_k_same_cost(self):
        one = flop_report(RESNET50_PRESET, IAConfig(patch_sizes=(1,)), placement=(3,), sia_only=True)
        three = flop_report(RESNET50_PRESET, IAConfig(patch_sizes=(1, 2, 3)), placement=(3,), sia_only=True)
        assert one.ia == three.ia

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError, match="resnet50@256x128"):
            flop_report("vgg16")

    def test_unknown_stage(self):
        with pytest.raises(ConfigurationError):
            flop_report(RESNET50_PRESET, placement=(5,))
