#!/usr/bin/env python3
"""
PhaseStep Quick Start Wizard
Interactive setup: pick a scenario, write its config and .env, run it
"""

import importlib
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

from phasestep_config import RunConfig, serialize_config, validate_config

REQUIRED_PACKAGES = ['numpy', 'scipy', 'pandas', 'openpyxl', 'dotenv']

SCENARIOS = {
    '1': ("Default", "Convex logistic potential, smooth cosine data"),
    '2': ("Two wells", "alpha2 = 3, phase separation starts"),
    '3': ("Rough data", "High-frequency perturbation of rho_0"),
    '4': ("Square", "2D, 32 x 32 cells"),
}


def scenario_config(choice: str) -> RunConfig:
    """The RunConfig behind a wizard menu entry"""
    config = RunConfig()
    if choice == '2':
        config = replace(config, potential=replace(config.potential, alpha2=3.0))
    elif choice == '3':
        config = replace(config, init=replace(config.init, preset='rough'))
    elif choice == '4':
        config = replace(config, grid=replace(config.grid, dim=2, cells=(32, 32), lengths=(1.0, 1.0)))
    elif choice != '1':
        raise ValueError(f"unknown scenario {choice!r}")
    validate_config(config)
    return config


class PhaseStepWizard:
    def __init__(self):
        self.config = None
        self.config_path = Path('scenario.cfg')

    def print_welcome(self):
        """Print welcome message"""
        print("🎉 Welcome to PhaseStep!")
        print("=" * 50)
        print("Semi-implicit viscous Cahn-Hilliard runs")
        print("Trajectories + Refinement Studies + Invariant Checks")
        print()

    def check_prerequisites(self):
        """Check if the numerical stack is installed"""
        print("🔍 Checking prerequisites...")

        if sys.version_info < (3, 8):
            print("❌ Python 3.8+ required")
            return False
        print(f"✅ Python {sys.version_info.major}.{sys.version_info.minor}")

        missing = []
        for name in REQUIRED_PACKAGES:
            try:
                importlib.import_module(name)
            except ImportError:
                missing.append(name)
        if missing:
            print(f"❌ Missing packages: {', '.join(missing)} (pip install -r requirements.txt)")
            return False
        print("✅ numpy / scipy / pandas available")
        return True

    def choose_scenario(self):
        """Let user pick a scenario and write it to scenario.cfg"""
        print("\n🎯 Scenario")
        print("-" * 10)
        for num, (title, desc) in SCENARIOS.items():
            print(f"{num}. {title} - {desc}")

        while True:
            choice = input(f"\nSelect scenario (1-{len(SCENARIOS)}): ").strip()
            if choice in SCENARIOS:
                break
            print(f"Invalid choice. Please select 1-{len(SCENARIOS)}.")

        self.config = scenario_config(choice)
        self.config_path.write_text(serialize_config(self.config), encoding='utf-8')
        print(f"✅ Scenario written to {self.config_path}")

    def create_env_file(self):
        """Create .env with the output and logging defaults"""
        if Path('.env').exists():
            print("ℹ️ Keeping existing .env")
            return
        Path('.env').write_text(
            "# PhaseStep Environment Configuration\n"
            "PHASESTEP_OUTPUT_DIR=phasestep_output\n"
            "PHASESTEP_LOG_LEVEL=INFO\n",
            encoding='utf-8')
        print("✅ Configuration saved to .env")

    def run_scenario(self):
        """Run one trajectory of the chosen scenario"""
        print("\n🚀 Running Scenario")
        print("-" * 18)
        cmd = [sys.executable, "phasestep_cli.py", "run", str(self.config_path)]
        try:
            print(f"Command: {' '.join(cmd)}")
            print("=" * 50)
            subprocess.run(cmd)
        except KeyboardInterrupt:
            print("\n❌ Run interrupted")
        except Exception as e:
            print(f"❌ Error running scenario: {e}")

    def show_next_steps(self):
        """Show what user can do next"""
        print("\n🎯 What's Next?")
        print("-" * 15)
        print("🔬 Refinement study:")
        print(f"   python phasestep_cli.py converge {self.config_path}")
        print()
        print("✅ Invariant suite:")
        print("   python phasestep_cli.py check")
        print()
        print("📊 Excel report:")
        print(f"   python phasestep_cli.py converge {self.config_path} --format excel")
        print()
        print("🔗 Documentation: COMMAND_GUIDE.md")

    def run_wizard(self):
        """Run the complete wizard"""
        self.print_welcome()
        if not self.check_prerequisites():
            print("❌ Prerequisites not met")
            return False
        self.choose_scenario()
        self.create_env_file()
        self.run_scenario()
        self.show_next_steps()
        print("\n🎉 Setup Complete!")
        return True


def main():
    """Main wizard function"""
    wizard = PhaseStepWizard()
    wizard.run_wizard()


if __name__ == "__main__":
    main()
