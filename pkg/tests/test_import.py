def test_import():
    import ionpf
    assert ionpf.__version__


def test_cli_import():
    from ionpf.cli import IonpfModalCLI
    assert IonpfModalCLI.__version__
