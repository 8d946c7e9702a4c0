#!/usr/bin/env python3
"""
环境检查脚本
验证项目所需的依赖、配置与核心求解器是否正常工作
"""

import sys
import os
import importlib

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))


def check_python_version():
    """检查Python版本（torch 需要 3.9+）"""
    print("1. 检查Python版本...")
    version = sys.version_info
    print(f"   Python版本: {version.major}.{version.minor}.{version.micro}")
    ok = version[:2] >= (3, 9)
    print("   ✅ 版本满足 >=3.9" if ok else "   ❌ 需要 Python 3.9 或以上")
    return ok


def check_dependencies():
    """检查依赖包"""
    print("\n2. 检查依赖包...")
    dependencies = ['numpy', 'torch', 'pandas', 'yaml', 'dotenv']
    all_ok = True
    for dep in dependencies:
        try:
            module = importlib.import_module(dep)
            print(f"   ✅ {dep}: {getattr(module, '__version__', '已安装')}")
        except ImportError:
            print(f"   ❌ {dep}: 未安装")
            all_ok = False
    try:
        importlib.import_module('prometheus_client')
        print("   ✅ prometheus_client: 已安装")
    except ImportError:
        print("   ⚠️  prometheus_client: 未安装（使用内置指标）")
    return all_ok


def check_project_structure():
    """检查项目结构"""
    print("\n3. 检查项目结构...")
    required_files = [
        "requirements.txt",
        "config/auction_config.yaml",
        "config/experiments/1x2_fractional_reg.yaml",
        "auction/main.py",
        "auction/models/auction_net.py",
        "auction/verification/lp.py",
        "auction/verification/certifier.py",
        "auction/experiments/suite.py",
    ]
    all_exist = True
    for file_path in required_files:
        if os.path.exists(file_path):
            print(f"   ✅ {file_path}")
        else:
            print(f"   ❌ {file_path}: 文件不存在")
            all_exist = False
    return all_exist


def check_configuration():
    """检查配置文件能否加载"""
    print("\n4. 检查配置...")
    try:
        from auction.config.unified_config import get_config_manager
        summary = get_config_manager().get_config_summary()
        print(f"   ✅ 配置加载成功: {summary['setting']} {summary['ir_mode']}，"
              f"确定性模式 {summary['deterministic']}")
        return True
    except Exception as e:
        print(f"   ❌ 配置加载失败: {e}")
        return False


def run_simple_test():
    """用一个小LP和一个常数网络验证求解链路"""
    print("\n5. 运行功能测试...")
    try:
        import numpy as np
        from auction.config.unified_config import AuctionConfig, CertifyConfig
        from auction.models.auction_net import zero_net
        from auction.verification.lp import LinearProgram, solve
        from auction.verification.certifier import certify_regret

        lp = LinearProgram.from_rows([1.0, 1.0], [([1.0, 2.0], "<=", 4.0), ([3.0, 1.0], "<=", 6.0)],
                                     [(0.0, np.inf), (0.0, np.inf)], sense="max")
        sol = solve(lp)
        print(f"   ✅ LP求解: 状态 {sol.status.value}，目标值 {sol.objective:.4f}")

        net = zero_net(AuctionConfig(n_agents=1, n_items=2, trunk_widths=[4], ir_mode="penalty_free"))
        cert = certify_regret(net, np.array([[0.3, 0.7]]), 0, CertifyConfig(empirical_steps=10))
        print(f"   ✅ 常数机制认证遗憾: {cert.certified_regret:.2e}（应为0）")
        return True
    except Exception as e:
        print(f"   ❌ 功能测试失败: {e}")
        import traceback
        traceback.print_exc()
        return False


def main():
    """主函数"""
    print("=" * 60)
    print("可认证拍卖 - 环境检查")
    print("=" * 60)

    checks = [
        ("Python版本", check_python_version),
        ("依赖包", check_dependencies),
        ("项目结构", check_project_structure),
        ("配置", check_configuration),
        ("功能测试", run_simple_test),
    ]

    results = []
    for check_name, check_func in checks:
        try:
            results.append((check_name, check_func()))
        except Exception as e:
            print(f"检查 {check_name} 时出错: {e}")
            results.append((check_name, False))

    print("\n" + "=" * 60)
    passed = sum(1 for _, ok in results if ok)
    for name, ok in results:
        print(f"   {'✅' if ok else '❌'} {name}")
    print(f"通过 {passed}/{len(results)} 项检查")
    return 0 if passed == len(results) else 1


if __name__ == "__main__":
    sys.exit(main())
